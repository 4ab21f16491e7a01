//! Shared fixtures, plus a macro that exposes check functions both as
//! `#[test]`s and as a plain list for other harnesses.
#![allow(dead_code)]

use uman_core::labelspace::{partition_from_matrix, LabelPartition, UmdaMatrix};
use uman_core::synthgen::{SyntheticSpec, SyntheticWorld};
use uman_core::uman::Hyperparams;

#[allow(unused_macros)]
macro_rules! checks {
    ($($name:ident),* $(,)?) => {
        #[allow(dead_code)]
        pub fn all() -> Vec<(&'static str, fn())> {
            vec![$((stringify!($name), $name as fn())),*]
        }

        #[cfg(test)]
        mod generated {
            $(
                #[test]
                fn $name() {
                    super::$name()
                }
            )*
        }
    };
}

/// Two sources of 2 common + 1 private class each over `|C| = 4`, one
/// target-private class.
pub fn small_problem(shift: f64, seed: u64) -> (LabelPartition, SyntheticWorld) {
    let p = partition_from_matrix(&UmdaMatrix::new(vec![2, 2], vec![1, 1], 4, 1)).unwrap();
    let spec = SyntheticSpec {
        feature_dim: 8,
        samples_per_class_per_domain: 40,
        class_center_scale: 2.0,
        domain_shift_scale: shift,
        domain_rotation: false,
        noise_sigma: 0.3,
        seed,
    };
    let world = SyntheticWorld::new(&spec, &p).unwrap();
    (p, world)
}

pub fn quick_hp(steps: usize) -> Hyperparams {
    Hyperparams {
        max_steps: steps,
        batch_size: 16,
        ..Hyperparams::default()
    }
}
