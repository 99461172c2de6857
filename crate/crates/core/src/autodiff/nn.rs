//! Parameter storage and the small set of network building blocks used by
//! the world model and the policies: linear layers, MLPs, a GRU cell, and
//! graph helpers for categorical distributions and observation likelihoods.

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use rand::rngs::StdRng;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors. The order is the contract
/// for optimizer state alignment and checkpoint layout.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name: {name}"
        );
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn iter_names_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter_mut())
    }

    /// Overwrite values from another store with identical layout.
    pub fn copy_from(&mut self, other: &ParamStore) {
        assert_eq!(self.names, other.names, "parameter layout mismatch");
        self.tensors.clone_from(&other.tensors);
    }

    pub fn set_values(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        match self.names.iter().position(|n| n == name) {
            Some(i) if self.tensors[i].shape() == tensor.shape() => {
                self.tensors[i] = tensor;
                Ok(())
            }
            Some(i) => Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: stored {:?}, loaded {:?}",
                self.tensors[i].shape(),
                tensor.shape()
            ))),
            None => Err(Error::Checkpoint(format!("unknown parameter {name}"))),
        }
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Tape handles for every parameter of a store, in store order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Load every parameter onto the tape. `tracked` decides whether backward
    /// will produce gradients for them.
    pub fn bind(tape: &mut Tape, store: &ParamStore, tracked: bool) -> Self {
        let vars = store.tensors().iter().map(|t| tape.leaf(t, tracked)).collect();
        Binding { vars }
    }

    /// Wrap existing tape handles, in store order. Used when parameters are
    /// placed on the tape by the caller (e.g. gradient checking).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter after backward, zeros where none flowed.
    pub fn grads(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(v, t)| {
                tape.grad_tensor(*v)
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
}

impl Activation {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Fully connected layer: y = x . W + b.
#[derive(Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let w = store.register(&format!("{name}.w"), Tensor::xavier_uniform(in_dim, out_dim, rng));
        let b = store.register(&format!("{name}.b"), Tensor::zeros(1, out_dim));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let wx = tape.matmul(x, bind.var(self.w))?;
        tape.add_row(wx, bind.var(self.b))
    }
}

/// MLP with a fixed hidden activation and a linear output layer.
#[derive(Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut StdRng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut dim = in_dim;
        for i in 0..hidden_layers {
            layers.push(Linear::new(store, &format!("{name}.{i}"), dim, hidden, rng));
            dim = hidden;
        }
        layers.push(Linear::new(store, &format!("{name}.{hidden_layers}"), dim, out_dim, rng));
        Mlp { layers, activation }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bind, h)?;
            if i < last {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}

/// Gated recurrent unit with fused gate matrices (reset, update, candidate).
#[derive(Clone)]
pub struct GruCell {
    wi: ParamId,
    wh: ParamId,
    bi: ParamId,
    bh: ParamId,
    hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut StdRng) -> Self {
        GruCell {
            wi: store.register(&format!("{name}.wi"), Tensor::xavier_uniform(in_dim, 3 * hidden, rng)),
            wh: store.register(&format!("{name}.wh"), Tensor::xavier_uniform(hidden, 3 * hidden, rng)),
            bi: store.register(&format!("{name}.bi"), Tensor::zeros(1, 3 * hidden)),
            bh: store.register(&format!("{name}.bh"), Tensor::zeros(1, 3 * hidden)),
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let gi = tape.matmul(x, bind.var(self.wi))?;
        let gi = tape.add_row(gi, bind.var(self.bi))?;
        let gh = tape.matmul(h, bind.var(self.wh))?;
        let gh = tape.add_row(gh, bind.var(self.bh))?;

        let gi_r = tape.slice_cols(gi, 0, n)?;
        let gi_z = tape.slice_cols(gi, n, n)?;
        let gi_n = tape.slice_cols(gi, 2 * n, n)?;
        let gh_r = tape.slice_cols(gh, 0, n)?;
        let gh_z = tape.slice_cols(gh, n, n)?;
        let gh_n = tape.slice_cols(gh, 2 * n, n)?;

        let r_pre = tape.add(gi_r, gh_r)?;
        let reset = tape.sigmoid(r_pre)?;
        let z_pre = tape.add(gi_z, gh_z)?;
        let update = tape.sigmoid(z_pre)?;
        let gated = tape.mul(reset, gh_n)?;
        let n_pre = tape.add(gi_n, gated)?;
        let cand = tape.tanh(n_pre)?;

        // h' = (1 - update) * cand + update * h
        let uc = tape.mul(update, cand)?;
        let keep = tape.mul(update, h)?;
        let diff = tape.sub(cand, uc)?;
        tape.add(diff, keep)
    }
}

// ── Distribution and likelihood graph helpers ──────────────────────────

/// KL divergence between batches of categorical distributions given as
/// logits, summed over the groups of each row: [m, v*class] -> [m, 1].
pub fn kl_categorical(tape: &mut Tape, q_logits: Var, p_logits: Var, class: usize) -> Result<Var> {
    let lq = tape.log_softmax(q_logits, class)?;
    let lp = tape.log_softmax(p_logits, class)?;
    let q = tape.softmax(q_logits, class)?;
    let diff = tape.sub(lq, lp)?;
    let prod = tape.mul(q, diff)?;
    tape.sum_rows(prod)
}

/// Log-probability of one-hot targets under the softmax of the logits,
/// summed over groups per row: [m, v*class] -> [m, 1].
pub fn categorical_log_prob(tape: &mut Tape, logits: Var, one_hot: Var, class: usize) -> Result<Var> {
    let lp = tape.log_softmax(logits, class)?;
    let picked = tape.mul(lp, one_hot)?;
    tape.sum_rows(picked)
}

/// Entropy of each row's categorical distribution(s): [m, v*class] -> [m, 1].
pub fn categorical_entropy(tape: &mut Tape, logits: Var, class: usize) -> Result<Var> {
    let p = tape.softmax(logits, class)?;
    let lp = tape.log_softmax(logits, class)?;
    let plogp = tape.mul(p, lp)?;
    let s = tape.sum_rows(plogp)?;
    tape.neg(s)
}

/// Negative Gaussian log-likelihood with unit variance, per row, dropping
/// the additive constant: 0.5 * sum((mean - target)^2).
pub fn gaussian_nll(tape: &mut Tape, mean: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(mean, target)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum_rows(sq)?;
    tape.scale(s, 0.5)
}

/// Negative Bernoulli log-likelihood from logits, per row:
/// sum over features of softplus(l) - t * l.
pub fn bernoulli_nll(tape: &mut Tape, logits: Var, target: Var) -> Result<Var> {
    // -log p(t|l) = softplus(l) - t*l, valid for t in [0,1].
    let sp = tape.softplus(logits)?;
    let tl = tape.mul(target, logits)?;
    let per_elem = tape.sub(sp, tl)?;
    tape.sum_rows(per_elem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kl_of_identical_logits_is_zero() {
        let mut tape = Tape::new();
        let logits = Tensor::from_vec(2, 4, vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.5, -0.5, 1.5]).unwrap();
        let q = tape.leaf(&logits, false);
        let p = tape.leaf(&logits, false);
        let kl = kl_categorical(&mut tape, q, p, 2).unwrap();
        for v in tape.value(kl) {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn kl_gradient_vanishes_at_equal_distributions() {
        // d KL(q||p) / d q_logits = 0 when q = p.
        let logits = Tensor::row(vec![0.4, -0.2, 1.1]);
        let mut tape = Tape::new();
        let q = tape.leaf(&logits, true);
        let p = tape.leaf(&logits, false);
        let kl = kl_categorical(&mut tape, q, p, 3).unwrap();
        let loss = tape.sum_all(kl).unwrap();
        tape.backward(loss).unwrap();
        for g in tape.grad(q).unwrap() {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_of_uniform_is_ln_n() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&Tensor::row(vec![0.0; 3]), false);
        let ent = categorical_entropy(&mut tape, logits, 3).unwrap();
        assert!((tape.value(ent)[0] - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gru_shapes_and_determinism() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "gru", 4, 6, &mut rng);
        let x = Tensor::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let h = Tensor::zeros(3, 6);

        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let bind = Binding::bind(&mut tape, store, false);
            let xv = tape.leaf(&x, false);
            let hv = tape.leaf(&h, false);
            let out = gru.forward(&mut tape, &bind, xv, hv).unwrap();
            tape.value_tensor(out)
        };
        let a = run(&store);
        let b = run(&store);
        assert_eq!(a.shape(), (3, 6));
        assert_eq!(a, b);
    }

    #[test]
    fn mlp_output_shape() {
        let mut rng = StdRng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "net", 5, 16, 2, 3, Activation::Elu, &mut rng);
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, &store, false);
        let x = tape.leaf(&Tensor::zeros(7, 5), false);
        let y = mlp.forward(&mut tape, &bind, x).unwrap();
        assert_eq!(tape.value_tensor(y).shape(), (7, 3));
    }

    #[test]
    fn duplicate_param_name_panics() {
        let result = std::panic::catch_unwind(|| {
            let mut store = ParamStore::new();
            store.register("w", Tensor::zeros(1, 1));
            store.register("w", Tensor::zeros(1, 1));
        });
        assert!(result.is_err());
    }
}
