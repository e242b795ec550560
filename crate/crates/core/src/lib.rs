pub mod autograd;
pub mod backbone;
pub mod corpus;
pub mod discriminative;
pub mod encodings;
pub mod eval;
pub mod generative;
pub mod regime;
pub mod trainer;
mod error;

pub use error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
