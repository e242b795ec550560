use rand::Rng;

use super::{Graph, ParamStore, Var};

/// One analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn rel_error(&self) -> f64 {
        let diff = (self.analytic - self.numeric).abs();
        if diff == 0.0 {
            return 0.0;
        }
        diff / self.analytic.abs().max(self.numeric.abs()).max(1e-8)
    }
}

/// Central finite differences at `n` scalars drawn by picking a parameter
/// tensor uniformly and then an entry uniformly. `loss` must be a pure
/// function of the store.
pub fn sample_gradient_check<F>(
    store: &mut ParamStore,
    n: usize,
    rng: &mut impl Rng,
    loss: F,
) -> Vec<GradSample>
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    store.zero_grads();
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    g.backward(l, store);

    let ids: Vec<_> = store.ids().collect();
    let eps = 1e-5;
    let eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let l = loss(&mut g, store);
        g.value(l).item()
    };
    (0..n)
        .map(|_| {
            let id = ids[rng.gen_range(0..ids.len())];
            let k = rng.gen_range(0..store.value(id).data().len());
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(store);
            store.value_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(store);
            store.value_mut(id).data_mut()[k] = orig;
            GradSample {
                param: store.name(id).to_string(),
                index: k,
                analytic: store.grad(id).data()[k],
                numeric: (plus - minus) / (2.0 * eps),
            }
        })
        .collect()
}
