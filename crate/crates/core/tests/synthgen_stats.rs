use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uman_core::labelspace::{partition_from_matrix, LabelPartition, UmdaMatrix};
use uman_core::synthgen::{
    batch_iterator, export_csv, generate, import_csv, DomainDataset, DomainKind, LabelColumn,
    SyntheticSpec,
};

fn partition() -> LabelPartition {
    partition_from_matrix(&UmdaMatrix::new(vec![3, 3], vec![2, 2], 4, 2)).unwrap()
}

fn spec(shift: f64, n: usize) -> SyntheticSpec {
    SyntheticSpec {
        feature_dim: 6,
        samples_per_class_per_domain: n,
        class_center_scale: 1.0,
        domain_shift_scale: shift,
        domain_rotation: false,
        noise_sigma: 0.5,
        seed: 21,
    }
}

fn class_rows(d: &DomainDataset, class: usize) -> Vec<Vec<f64>> {
    d.samples
        .iter()
        .filter(|s| s.true_label() == Some(class))
        .map(|s| s.features.clone())
        .collect()
}

fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b / rows.len() as f64;
        }
    }
    m
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn shared_class(p: &LabelPartition) -> usize {
    *p.source(0)
        .iter()
        .find(|c| p.source(1).contains(c))
        .unwrap()
}

#[test]
fn zero_gap_domains_pass_a_permutation_test() {
    let p = partition();
    let data = generate(&spec(0.0, 200), &p).unwrap();
    let c = shared_class(&p);
    let a = class_rows(&data[0], c);
    let b = class_rows(&data[1], c);
    assert_eq!((a.len(), b.len()), (200, 200));
    let observed = dist(&mean(&a), &mean(&b));

    let mut pooled: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rounds = 999;
    let mut extreme = 0;
    for _ in 0..rounds {
        pooled.shuffle(&mut rng);
        let (x, y) = pooled.split_at(200);
        if dist(&mean(x), &mean(y)) >= observed {
            extreme += 1;
        }
    }
    let p_value = (extreme + 1) as f64 / (rounds + 1) as f64;
    assert!(p_value > 0.01, "p = {p_value}");
}

#[test]
fn shifted_domains_fail_the_same_test() {
    let p = partition();
    let data = generate(&spec(1.0, 200), &p).unwrap();
    let c = shared_class(&p);
    let observed = dist(
        &mean(&class_rows(&data[0], c)),
        &mean(&class_rows(&data[1], c)),
    );
    // the standard error of a mean difference here is about 0.05 per axis
    assert!(observed > 0.5, "{observed}");
}

#[test]
fn between_domain_distance_grows_with_shift_scale() {
    let p = partition();
    let c = shared_class(&p);
    let mut last = -1.0;
    for scale in [0.0, 0.5, 2.0] {
        let data = generate(&spec(scale, 100), &p).unwrap();
        let d = dist(
            &mean(&class_rows(&data[0], c)),
            &mean(&class_rows(&data[1], c)),
        );
        assert!(d >= last, "scale {scale}: {d} < {last}");
        last = d;
    }
}

#[test]
fn batch_class_frequencies_match_the_dataset() {
    let p = partition();
    let data = generate(&spec(1.0, 30), &p).unwrap();
    let mut it = batch_iterator(&data, 7, 11).unwrap();
    let steps = 2000;
    let k = p.source(0).len();
    let mut counts = vec![0usize; p.total_classes()];
    for _ in 0..steps {
        let b = it.next_batch().unwrap();
        assert_eq!(b.target.indices.len(), 7);
        for &y in &b.sources[0].labels {
            counts[y] += 1;
        }
    }
    let n = (steps * 7) as f64;
    let pc = 1.0 / k as f64;
    let sigma = (n * pc * (1.0 - pc)).sqrt();
    for &c in p.source(0) {
        let dev = (counts[c] as f64 - n * pc).abs();
        assert!(dev <= 3.0 * sigma, "class {c}: {} vs {}", counts[c], n * pc);
    }
    for (c, &n) in counts.iter().enumerate() {
        if !p.source(0).contains(&c) {
            assert_eq!(n, 0);
        }
    }
}

#[test]
fn generation_respects_label_sets() {
    let p = partition();
    let data = generate(&spec(1.0, 10), &p).unwrap();
    for (k, d) in data.iter().enumerate().take(2) {
        assert!(d
            .samples
            .iter()
            .all(|s| p.source(k).contains(&s.label.unwrap())));
    }
    let t = &data[2];
    assert_eq!(t.kind, DomainKind::Target);
    assert!(t.samples.iter().all(|s| s.label.is_none()));
    assert!(t
        .samples
        .iter()
        .all(|s| p.target().contains(&s.true_label().unwrap())));
}

#[test]
fn csv_round_trip_preserves_features() {
    let p = partition();
    let data = generate(&spec(1.0, 5), &p).unwrap();
    let mut buf = Vec::new();
    export_csv(&mut buf, &data[0], LabelColumn::Include).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("domain_id,label,f0,"));
    let back = import_csv(buf.as_slice(), DomainKind::Source).unwrap();
    assert_eq!(back.len(), data[0].len());
    for (a, b) in back.samples.iter().zip(&data[0].samples) {
        assert_eq!(a.features, b.features);
        assert_eq!(a.label, b.label);
    }

    let mut buf = Vec::new();
    export_csv(&mut buf, &data[2], LabelColumn::Omit).unwrap();
    let back = import_csv(buf.as_slice(), DomainKind::Target).unwrap();
    assert!(back.samples.iter().all(|s| s.label.is_none()));
}
