//! Minimal CPU network machinery: flat parameter layouts, per-sample layer
//! kernels with hand-written backward passes, and an Adam optimizer.

pub mod adam;
pub mod layers;
pub mod params;
pub mod scalar;

use rayon::prelude::*;

pub use adam::Adam;
pub use params::{ParamLayout, TensorSpec};
pub use scalar::Scalar;

/// Samples per gradient partial sum. Fixed so the floating-point reduction
/// order does not depend on the thread count.
pub const REDUCTION_CHUNK: usize = 8;

/// Runs `per_sample` over `samples` in parallel and sums the gradients it
/// writes, always in the same chunked order.
///
/// Returns the summed gradient and the per-sample outputs in input order.
pub fn accumulate_gradients<T, S, R, E, F>(
    samples: &[S],
    n_params: usize,
    per_sample: F,
) -> Result<(Vec<T>, Vec<R>), E>
where
    T: Scalar,
    S: Sync,
    R: Send,
    E: Send,
    F: Fn(&S, &mut [T]) -> Result<R, E> + Sync,
{
    type Partial<T, R, E> = Result<(Vec<T>, Vec<R>), E>;
    let partials: Vec<Partial<T, R, E>> = samples
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut grad = vec![T::zero(); n_params];
            let mut outs = Vec::with_capacity(chunk.len());
            for s in chunk {
                outs.push(per_sample(s, &mut grad)?);
            }
            Ok((grad, outs))
        })
        .collect();

    let mut total = vec![T::zero(); n_params];
    let mut outputs = Vec::with_capacity(samples.len());
    for part in partials {
        let (grad, outs) = part?;
        for (t, g) in total.iter_mut().zip(&grad) {
            *t += *g;
        }
        outputs.extend(outs);
    }
    Ok((total, outputs))
}

pub fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
