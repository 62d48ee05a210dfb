use crate::{Error, Result};

/// Plain SGD: `p -= learning_rate * g`, no momentum or weight decay.
pub fn sgd_step(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    Ok(())
}
