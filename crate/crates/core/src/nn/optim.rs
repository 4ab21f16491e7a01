use crate::error::{Error, Result};
use crate::nn::mlp::Mlp;

/// Plain SGD: `p <- p - lr * grad`, then zero the gradients.
///
/// Refuses to touch the parameters if any gradient is non-finite.
pub fn sgd_step(net: &mut Mlp, learning_rate: f64) -> Result<()> {
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(Error::invalid(format!("learning rate {learning_rate}")));
    }
    if let Some(pos) = net.grad_vector().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {pos} of a network with {} parameters",
            net.num_params()
        )));
    }
    for (param, grad) in net.params_and_grads_mut() {
        for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
            *p -= learning_rate * g;
        }
        grad.data_mut().fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, GradTape, Tensor2};

    fn scalar_net(p: f64) -> Mlp {
        let layer = Dense::new(
            Tensor2::scalar(p),
            Tensor2::zeros(1, 1),
            Activation::Identity,
        )
        .unwrap();
        Mlp::from_layers(vec![layer]).unwrap()
    }

    /// Sets the weight gradient of a 1x1 net by backpropagating `g * w`.
    fn set_grad(net: &mut Mlp, g: f64) {
        net.zero_grad();
        let mut tape = GradTape::new();
        let x = tape.leaf(Tensor2::scalar(g));
        let y = net.forward(&mut tape, x).unwrap();
        tape.backward(y).unwrap();
        net.collect_grads(&tape);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut net = scalar_net(1.0);
        set_grad(&mut net, 2.0);
        let before = net.param_vector();
        sgd_step(&mut net, 0.0).unwrap();
        assert_eq!(net.param_vector(), before);
        assert!(net.grad_vector().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_step_arithmetic() {
        let mut net = scalar_net(1.0);
        set_grad(&mut net, 2.0);
        assert_eq!(net.grad_vector()[0], 2.0);
        sgd_step(&mut net, 0.1).unwrap();
        assert!((net.param_vector()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges_to_minimum() {
        // loss (p - 3)^2, gradient 2(p - 3)
        let mut net = scalar_net(0.0);
        let mut steps = 0;
        while (net.param_vector()[0] - 3.0).abs() >= 1e-3 {
            let p = net.param_vector()[0];
            set_grad(&mut net, 2.0 * (p - 3.0));
            sgd_step(&mut net, 0.1).unwrap();
            steps += 1;
            assert!(steps <= 500);
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut net = scalar_net(1.0);
        net.zero_grad();
        for (_, g) in net.params_and_grads_mut().take(1) {
            g.data_mut()[0] = f64::NAN;
        }
        let before = net.param_vector();
        assert!(matches!(sgd_step(&mut net, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(net.param_vector(), before);
    }
}
