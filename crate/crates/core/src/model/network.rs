use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::diffcore::{Tape, Tensor, Var};
use crate::dsp::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    #[default]
    Gru,
    Lstm,
}

impl std::str::FromStr for CellType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(Self::Gru),
            "lstm" => Ok(Self::Lstm),
            _ => Err(format!("unknown cell type '{s}' (gru|lstm)")),
        }
    }
}

impl std::fmt::Display for CellType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gru => "gru",
            Self::Lstm => "lstm",
        })
    }
}

/// How the mixture magnitude is scaled before entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputScaling {
    /// Divide by the utterance maximum.
    #[default]
    Max,
    /// `ln(1 + 100·x/max)`, compressing the dynamic range.
    Log,
}

impl std::str::FromStr for InputScaling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Self::Max),
            "log" => Ok(Self::Log),
            _ => Err(format!("unknown input scaling '{s}' (max|log)")),
        }
    }
}

impl std::fmt::Display for InputScaling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Log => "log",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Frequency bins per frame.
    pub bins: usize,
    /// Width of the fully-connected layers.
    pub hidden: usize,
    /// Number of bidirectional recurrent layers (0 = feed-forward only).
    pub layers: usize,
    /// Cells per direction.
    pub cells: usize,
    pub cell: CellType,
    /// Embedding dimension.
    pub dim: usize,
    pub input_scaling: InputScaling,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            bins: 257,
            hidden: 128,
            layers: 2,
            cells: 64,
            cell: CellType::Gru,
            dim: 8,
            input_scaling: InputScaling::Max,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.bins == 0 || self.hidden == 0 || self.dim == 0 {
            return Err(ModelError::Config("bins, hidden and dim must be positive".into()));
        }
        if self.layers > 0 && self.cells == 0 {
            return Err(ModelError::Config("recurrent layers need at least one cell".into()));
        }
        Ok(())
    }

    fn gates(&self) -> usize {
        match self.cell {
            CellType::Gru => 3,
            CellType::Lstm => 4,
        }
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, [usize; 2])> {
        let (f, h, c, d) = (self.bins, self.hidden, self.cells, self.dim);
        let mut out = vec![
            ("enc1.w".to_string(), [f, h]),
            ("enc1.b".to_string(), [1, h]),
            ("enc2.w".to_string(), [h, h]),
            ("enc2.b".to_string(), [1, h]),
        ];
        let g = self.gates() * c;
        let mut input = h;
        for layer in 0..self.layers {
            for dir in ["fwd", "bwd"] {
                let p = format!("rnn{layer}.{dir}");
                out.push((format!("{p}.wx"), [input, g]));
                out.push((format!("{p}.wh"), [c, g]));
                out.push((format!("{p}.bx"), [1, g]));
                out.push((format!("{p}.bh"), [1, g]));
            }
            input = 2 * c;
        }
        out.push(("dec1.w".to_string(), [input, h]));
        out.push(("dec1.b".to_string(), [1, h]));
        out.push(("dec2.w".to_string(), [h, f * d]));
        out.push(("dec2.b".to_string(), [1, f * d]));
        out
    }
}

/// Encoder, bidirectional recurrent core and decoder mapping a `T×F`
/// magnitude to a `TF×D` embedding matrix (row `t·F + f`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNetwork {
    pub config: NetworkConfig,
    params: Vec<Tensor>,
}

/// Parameters registered on one tape, in layout order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl EmbeddingNetwork {
    /// Uniform `±1/√fan_in` initialization, deterministic in `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = config.cells;
        let mut last_fan_in = 1;
        let params = config
            .layout()
            .into_iter()
            .map(|(name, [r, c])| {
                let fan_in = if name.starts_with("rnn") {
                    cells
                } else if name.ends_with(".w") {
                    last_fan_in = r;
                    r
                } else {
                    last_fan_in
                };
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect())
                    .expect("layout shape")
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(ModelError::Mismatch(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != *shape {
                return Err(ModelError::Mismatch(format!(
                    "parameter {name}: expected shape {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p.clone())).collect(),
        }
    }

    /// Scaled network input `T×F` for a mixture spectrogram.
    pub fn input(&self, x: &Spectrogram) -> Result<Tensor, ModelError> {
        if x.bins != self.config.bins {
            return Err(ModelError::Mismatch(format!(
                "network expects {} frequency bins, spectrogram has {}",
                self.config.bins, x.bins
            )));
        }
        if x.magnitude.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("input magnitude".into()));
        }
        let max = x.magnitude.iter().copied().fold(0.0, f64::max);
        let inv = if max > 0.0 { 1.0 / max } else { 0.0 };
        let data = match self.config.input_scaling {
            InputScaling::Max => x.magnitude.iter().map(|v| v * inv).collect(),
            InputScaling::Log => x.magnitude.iter().map(|v| (100.0 * v * inv).ln_1p()).collect(),
        };
        Ok(Tensor::new(x.frames, x.bins, data)?)
    }

    /// Embeddings `TF×D` for the spectrogram, built on `tape`.
    pub fn embed(&self, tape: &mut Tape, bound: &Bound, x: &Spectrogram) -> Result<Var, ModelError> {
        let input = tape.constant(self.input(x)?);
        self.forward(tape, bound, input)
    }

    /// Forward pass on an already-scaled `T×F` input.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var, ModelError> {
        let p = &bound.vars;
        let frames = tape.shape(input)[0];
        let mut i = 0;
        let mut next = || {
            i += 1;
            p[i - 1]
        };
        let h = dense(tape, input, next(), next())?;
        let mut h = tape.tanh(h);
        let h2 = dense(tape, h, next(), next())?;
        h = tape.tanh(h2);
        for _ in 0..self.config.layers {
            let fwd = [next(), next(), next(), next()];
            let bwd = [next(), next(), next(), next()];
            let a = self.recurrent(tape, h, fwd, false)?;
            let b = self.recurrent(tape, h, bwd, true)?;
            h = tape.concat_cols(&[a, b])?;
        }
        let d1 = dense(tape, h, next(), next())?;
        let d1 = tape.relu(d1);
        let out = dense(tape, d1, next(), next())?;
        Ok(tape.reshape(out, frames * self.config.bins, self.config.dim)?)
    }

    fn recurrent(&self, tape: &mut Tape, x: Var, w: [Var; 4], reverse: bool) -> Result<Var, ModelError> {
        let [wx, wh, bx, bh] = w;
        let frames = tape.shape(x)[0];
        let c = self.config.cells;
        let proj = dense(tape, x, wx, bx)?;
        let mut h = tape.constant(Tensor::zeros(1, c));
        let mut cell = tape.constant(Tensor::zeros(1, c));
        let mut outputs = vec![h; frames];
        let order: Vec<usize> = if reverse {
            (0..frames).rev().collect()
        } else {
            (0..frames).collect()
        };
        for t in order {
            let xt = tape.slice_rows(proj, t, 1)?;
            let hm = tape.matmul(h, wh)?;
            let hp = tape.add(hm, bh)?;
            match self.config.cell {
                CellType::Gru => {
                    let xr = tape.slice_cols(xt, 0, c)?;
                    let xz = tape.slice_cols(xt, c, c)?;
                    let xn = tape.slice_cols(xt, 2 * c, c)?;
                    let hr = tape.slice_cols(hp, 0, c)?;
                    let hz = tape.slice_cols(hp, c, c)?;
                    let hn = tape.slice_cols(hp, 2 * c, c)?;
                    let r = tape.add(xr, hr)?;
                    let r = tape.sigmoid(r);
                    let z = tape.add(xz, hz)?;
                    let z = tape.sigmoid(z);
                    let rn = tape.mul(r, hn)?;
                    let n = tape.add(xn, rn)?;
                    let n = tape.tanh(n);
                    // h = n + z∘(h − n)
                    let diff = tape.sub(h, n)?;
                    let zd = tape.mul(z, diff)?;
                    h = tape.add(n, zd)?;
                }
                CellType::Lstm => {
                    let g = tape.add(xt, hp)?;
                    let gi = tape.slice_cols(g, 0, c)?;
                    let gf = tape.slice_cols(g, c, c)?;
                    let gg = tape.slice_cols(g, 2 * c, c)?;
                    let go = tape.slice_cols(g, 3 * c, c)?;
                    let i = tape.sigmoid(gi);
                    let f = tape.sigmoid(gf);
                    let gg = tape.tanh(gg);
                    let o = tape.sigmoid(go);
                    let fc = tape.mul(f, cell)?;
                    let ig = tape.mul(i, gg)?;
                    cell = tape.add(fc, ig)?;
                    let tc = tape.tanh(cell);
                    h = tape.mul(o, tc)?;
                }
            }
            outputs[t] = h;
        }
        Ok(tape.stack_rows(&outputs)?)
    }
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row_broadcast(y, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(layers: usize, cell: CellType) -> NetworkConfig {
        NetworkConfig {
            bins: 5,
            hidden: 6,
            layers,
            cells: 3,
            cell,
            dim: 2,
            input_scaling: InputScaling::Max,
        }
    }

    fn spec(frames: usize, bins: usize, mag: Vec<f64>) -> Spectrogram {
        Spectrogram {
            phase: vec![0.0; mag.len()],
            magnitude: mag,
            frames,
            bins,
            frame_len: 2 * (bins - 1),
            hop: 2,
            sample_rate: 8000,
            num_samples: 0,
        }
    }

    #[test]
    fn output_shape_is_tf_by_d() {
        let cfg = NetworkConfig {
            dim: 20,
            ..Default::default()
        };
        let net = EmbeddingNetwork::new(cfg, 0).unwrap();
        let x = spec(10, 257, (0..2570).map(|i| (i % 13) as f64).collect());
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let v = net.embed(&mut tape, &b, &x).unwrap();
        assert_eq!(tape.shape(v), [2570, 20]);
        assert!(tape.value(v).all_finite());
    }

    #[test]
    fn identical_frames_identical_rows_without_recurrence() {
        let net = EmbeddingNetwork::new(tiny(0, CellType::Gru), 1).unwrap();
        let frame = [0.5, 2.0, 1.0, 0.0, 3.0];
        let x = spec(2, 5, frame.iter().chain(frame.iter()).copied().collect());
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let v = net.embed(&mut tape, &b, &x).unwrap();
        let v = tape.value(v);
        for f in 0..5 {
            assert_eq!(v.row_slice(f), v.row_slice(5 + f));
        }
    }

    #[test]
    fn random_inputs_give_finite_outputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for cell in [CellType::Gru, CellType::Lstm] {
            let net = EmbeddingNetwork::new(tiny(2, cell), 2).unwrap();
            let x = spec(7, 5, (0..35).map(|_| rng.gen_range(0.0..10.0)).collect());
            let mut tape = Tape::new();
            let b = net.bind(&mut tape);
            let v = net.embed(&mut tape, &b, &x).unwrap();
            assert!(tape.value(v).all_finite());
            let s = tape.sum(v);
            let g = tape.backward(s).unwrap();
            for var in &b.vars {
                assert!(g.tensor(*var).all_finite());
            }
        }
    }

    #[test]
    fn layout_matches_params_and_rejects_wrong_shapes() {
        let cfg = tiny(1, CellType::Lstm);
        let net = EmbeddingNetwork::new(cfg.clone(), 3).unwrap();
        let again = EmbeddingNetwork::from_params(cfg.clone(), net.params().to_vec()).unwrap();
        assert_eq!(net, again);
        let mut bad = net.params().to_vec();
        bad[0] = Tensor::zeros(1, 1);
        assert!(matches!(EmbeddingNetwork::from_params(cfg, bad), Err(ModelError::Mismatch(_))));
    }

    #[test]
    fn recurrent_gradients_match_finite_differences() {
        let cfg = tiny(1, CellType::Gru);
        let net = EmbeddingNetwork::new(cfg, 5).unwrap();
        let x = spec(3, 5, (0..15).map(|i| ((i * 7) % 5) as f64 + 0.5).collect());
        let loss_of = |n: &EmbeddingNetwork| {
            let mut tape = Tape::new();
            let b = n.bind(&mut tape);
            let v = n.embed(&mut tape, &b, &x).unwrap();
            let s = tape.square(v);
            let s = tape.sum(s);
            (tape.value(s).data()[0], tape.backward(s).unwrap().tensor(b.vars[5]))
        };
        let (_, g) = loss_of(&net);
        let h = 1e-6;
        for j in 0..g.len() {
            let mut p = net.clone();
            p.params_mut()[5].data_mut()[j] += h;
            let mut m = net.clone();
            m.params_mut()[5].data_mut()[j] -= h;
            let fd = (loss_of(&p).0 - loss_of(&m).0) / (2.0 * h);
            assert!((fd - g.data()[j]).abs() < 1e-6 * (1.0 + fd.abs()), "{j}: {fd} vs {}", g.data()[j]);
        }
    }
}
