//! Central finite-difference checks of the analytic gradients (64-bit).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::attention::AttentionParams;
use crate::backbone::{BackboneSpec, NetworkWeights};
use crate::space::{AttentionGenome, SlotGene, SpaceParams};
use crate::tensor::{FeatureMap, Real};

pub const STEP: f64 = 1e-3;

/// Random map whose entries are a shuffled evenly spaced grid in `[-1, 1]`
/// plus small jitter, so max-pool ties are at least one grid step apart.
pub fn random_map<T: Real>(
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> FeatureMap<T> {
    let len = c * n * h * w;
    let step = 2.0 / len.max(1) as f64;
    let mut vals: Vec<f64> = (0..len)
        .map(|i| -1.0 + step * i as f64 + rng.random_range(0.0..0.2 * step))
        .collect();
    vals.shuffle(rng);
    let mut m = FeatureMap::zeros(c, n, h, w);
    for (d, v) in m.data.iter_mut().zip(vals) {
        *d = T::lit(v);
    }
    m
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Accumulates central-difference comparisons. Entries whose stencil
/// straddles a ReLU or max kink are skipped, up to a cap on the skipped
/// fraction.
pub struct FdCheck {
    h: f64,
    worst: f64,
    total: usize,
    skipped: usize,
    max_skip: f64,
}

impl FdCheck {
    /// At most 2% skipped.
    pub fn new(h: f64) -> Self {
        FdCheck { h, worst: 0.0, total: 0, skipped: 0, max_skip: 0.02 }
    }

    pub fn with_skip_cap(mut self, max_skip: f64) -> Self {
        self.max_skip = max_skip;
        self
    }

    pub fn checked(&self) -> usize {
        self.total - self.skipped
    }

    /// Central difference over `±h` from a 5-point stencil `L(w + j·h/2)`,
    /// `j = -2..=2`. On a smooth stretch the three second differences lie on
    /// a line up to `O(h⁴)`; a ReLU or max kink inside the stencil bends
    /// that line by a spike of order `Δslope·h`, and the entry is skipped.
    pub fn entry_stencil(&mut self, analytic: f64, l: &[f64; 5]) {
        self.total += 1;
        let fourth = l[4] - 4.0 * l[3] + 6.0 * l[2] - 4.0 * l[1] + l[0];
        let scale = l.iter().map(|v| v.abs()).fold(0.0, f64::max);
        // bounds the shift a missed kink could cause at about 1e-5·|g|
        let tol = 2.5e-9 * analytic.abs().max(1e-4) + 4e-14 * scale.max(1.0);
        if fourth.abs() > tol {
            self.skipped += 1;
            return;
        }
        // Richardson combination of the ±h/2 and ±h central differences
        let (inner, outer) = ((l[3] - l[1]) / self.h, (l[4] - l[0]) / (2.0 * self.h));
        let numeric = (4.0 * inner - outer) / 3.0;
        self.worst = self.worst.max(rel_err(analytic, numeric));
    }

    /// Worst relative error, or `None` when too many entries had to be
    /// skipped: the point sits on a kink shared by many entries (a hidden
    /// ReLU at zero, say) and says nothing about the gradient code.
    pub fn finish(&self) -> Option<f64> {
        if self.skipped as f64 > self.max_skip * self.total as f64 {
            return None;
        }
        Some(self.worst)
    }
}

/// Max relative error between analytic and central-difference gradients of
/// `L = Σ r ⊙ module(x)` over every input and parameter entry, or `None`
/// when the random point landed on a kink.
pub fn fd_check_module(
    gene: &SlotGene,
    space: &SpaceParams,
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> Option<f64> {
    let h_step = STEP;
    let mut params = AttentionParams::<f64>::init(gene, space, c, h * w, rng).unwrap();
    let x = random_map::<f64>(c, n, h, w, rng);
    let r: Vec<f64> = (0..x.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |p: &AttentionParams<f64>, x: &FeatureMap<f64>| -> f64 {
        let (y, _) = p.forward(x).unwrap();
        y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = params.forward(&x).unwrap();
    let mut dy = x.zeros_like();
    dy.data.copy_from_slice(&r);
    let mut grads = params.zeros_like();
    let dx = params.backward(&cache, &dy, &mut grads);

    let mut check = FdCheck::new(h_step);
    let offsets = |orig: f64| (0..5).map(move |j| orig + (j as f64 - 2.0) * h_step / 2.0);
    let mut xp = x.clone();
    for i in 0..x.data.len() {
        let orig = xp.data[i];
        let mut l = [0.0; 5];
        for (v, o) in l.iter_mut().zip(offsets(orig)) {
            xp.data[i] = o;
            *v = loss(&params, &xp);
        }
        xp.data[i] = orig;
        check.entry_stencil(dx.data[i], &l);
    }
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.data.clone()).collect();
    for (ti, an) in analytic.iter().enumerate() {
        for i in 0..an.len() {
            let orig = params.tensors()[ti].1.data[i];
            let mut l = [0.0; 5];
            for (v, o) in l.iter_mut().zip(offsets(orig)) {
                params.tensors_mut()[ti].data[i] = o;
                *v = loss(&params, &x);
            }
            params.tensors_mut()[ti].data[i] = orig;
            check.entry_stencil(an[i], &l);
        }
    }
    check.finish()
}

/// Same check for a whole network on a two-sample batch with
/// `L = Σ r ⊙ logits + Σ q ⊙ features`. Biases are randomized so ReLU
/// patterns are not degenerate. At most `per_tensor` entries of each
/// parameter tensor are probed. Deep ReLU stacks put many kinks within
/// `±h` of a two-sample batch, so up to half of the probes may be skipped
/// as kinks.
pub fn fd_check_network(
    spec: &BackboneSpec,
    space: &SpaceParams,
    genome: &AttentionGenome,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> Option<f64> {
    let h_step = STEP;
    let mut w = NetworkWeights::<f64>::build(spec, space, genome, rng.random(), rng.random()).unwrap();
    for c in &mut w.convs {
        for b in &mut c.bias.data {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let n = 2;
    let x = random_map::<f64>(spec.input_channels, n, spec.input_height, spec.input_width, rng);
    let k = spec.num_classes;
    let f = spec.feature_dim();
    let r: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let q: Vec<f64> = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |w: &NetworkWeights<f64>| -> f64 {
        let p = w.forward(spec, x.clone()).unwrap();
        let a: f64 = p.logits.iter().zip(&r).map(|(a, b)| a * b).sum();
        a + p.features.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>()
    };
    let pass = w.forward(spec, x.clone()).unwrap();
    let mut grads = w.zeros_like();
    w.backward(&pass, &r, Some(&q), &mut grads);
    let analytic: Vec<Vec<f64>> = grads.tensors_mut().iter().map(|t| t.data.clone()).collect();

    let mut check = FdCheck::new(h_step).with_skip_cap(0.5);
    for (ti, an) in analytic.iter().enumerate() {
        let mut idx: Vec<usize> = (0..an.len()).collect();
        idx.shuffle(rng);
        idx.truncate(per_tensor);
        for i in idx {
            let orig = w.tensors_mut()[ti].data[i];
            let mut l = [0.0; 5];
            for (j, v) in l.iter_mut().enumerate() {
                w.tensors_mut()[ti].data[i] = orig + (j as f64 - 2.0) * h_step / 2.0;
                *v = loss(&w);
            }
            w.tensors_mut()[ti].data[i] = orig;
            check.entry_stencil(an[i], &l);
        }
    }
    check.finish()
}
