use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Half-width of the uniform initializer for weights and embeddings.
pub const INIT_SCALE: f64 = 0.08;

/// Affine map `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(
                format!("{prefix}.w"),
                Tensor::uniform(&[input, output], INIT_SCALE, rng),
            )?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[1, output]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

/// Single-layer GRU:
/// `z = σ([x;h]W_z + b_z)`, `r = σ([x;h]W_r + b_r)`,
/// `h̃ = tanh([x; r⊙h]W_h + b_h)`, `h' = (1−z)⊙h + z⊙h̃`.
#[derive(Debug, Clone)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    z: Linear,
    r: Linear,
    h: Linear,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            input,
            hidden,
            z: Linear::new(store, &format!("{prefix}.z"), input + hidden, hidden, rng)?,
            r: Linear::new(store, &format!("{prefix}.r"), input + hidden, hidden, rng)?,
            h: Linear::new(store, &format!("{prefix}.h"), input + hidden, hidden, rng)?,
        })
    }

    /// `x: B×input`, `h: B×hidden` → `B×hidden`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let xh = tape.concat_cols(&[x, h])?;
        let z = self.z.forward(tape, store, xh)?;
        let z = tape.sigmoid(z);
        let r = self.r.forward(tape, store, xh)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let xrh = tape.concat_cols(&[x, rh])?;
        let cand = self.h.forward(tape, store, xrh)?;
        let cand = tape.tanh(cand);
        let delta = tape.sub(cand, h)?;
        let upd = tape.mul(z, delta)?;
        tape.add(h, upd)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single-layer LSTM with gate blocks `[i | f | o | g]` in one matrix:
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    gates: Linear,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            input,
            hidden,
            gates: Linear::new(
                store,
                &format!("{prefix}.gates"),
                input + hidden,
                4 * hidden,
                rng,
            )?,
        })
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let n = self.hidden;
        let xh = tape.concat_cols(&[x, state.h])?;
        let pre = self.gates.forward(tape, store, xh)?;
        let gate = |tape: &mut Tape, k: usize| tape.slice_cols(pre, k * n, (k + 1) * n);
        let (i, f, o, g) = (
            gate(tape, 0)?,
            gate(tape, 1)?,
            gate(tape, 2)?,
            gate(tape, 3)?,
        );
        let (i, f, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.sigmoid(o));
        let g = tape.tanh(g);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Row-wise select: rows with `active[r]` take `new`, the rest keep `old`.
pub fn blend_rows(tape: &mut Tape, old: Var, new: Var, active: &[bool]) -> Result<Var> {
    if active.iter().all(|&a| a) {
        return Ok(new);
    }
    let (rows, cols) = tape.dims(new);
    let mask: Vec<f64> = active
        .iter()
        .flat_map(|&a| std::iter::repeat(if a { 1.0 } else { 0.0 }).take(cols))
        .collect();
    let m = tape.constant_matrix(rows, cols, mask);
    let delta = tape.sub(new, old)?;
    let kept = tape.mul(m, delta)?;
    tape.add(old, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::rng::seeded_rng;

    fn zero_params(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
    }

    #[test]
    fn gru_zero_params_halves_state() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 3, 4, &mut seeded_rng(0)).unwrap();
        zero_params(&mut store);
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::new(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap());
        let h = tape.constant(&Tensor::new(vec![1, 4], vec![1.0, -0.5, 0.25, 4.0]).unwrap());
        let out = gru.step(&mut tape, &store, x, h).unwrap();
        assert_eq!(tape.value(out), &[0.5, -0.25, 0.125, 2.0]);
    }

    #[test]
    fn gru_output_width_is_hidden() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 7, 5, &mut seeded_rng(1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[2, 7]));
        let h = tape.constant(&Tensor::zeros(&[2, 5]));
        let out = gru.step(&mut tape, &store, x, h).unwrap();
        assert_eq!(tape.dims(out), (2, 5));
        let bad = tape.constant(&Tensor::zeros(&[2, 6]));
        assert!(gru.step(&mut tape, &store, bad, h).is_err());
    }

    #[test]
    fn lstm_zero_params() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 2, 3, &mut seeded_rng(0)).unwrap();
        zero_params(&mut store);
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let h = tape.constant(&Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap());
        let c = tape.constant(&Tensor::new(vec![1, 3], vec![2.0, -1.0, 0.5]).unwrap());
        let s = lstm.step(&mut tape, &store, x, LstmState { h, c }).unwrap();
        assert_eq!(tape.value(s.c), &[1.0, -0.5, 0.25]);
        for (hv, cv) in tape.value(s.h).iter().zip(tape.value(s.c)) {
            assert!((hv - 0.5 * cv.tanh()).abs() < 1e-15);
        }

        let z = tape.constant(&Tensor::zeros(&[1, 3]));
        let zx = tape.constant(&Tensor::zeros(&[1, 2]));
        let s = lstm
            .step(&mut tape, &store, zx, LstmState { h: z, c: z })
            .unwrap();
        assert!(tape
            .value(s.h)
            .iter()
            .chain(tape.value(s.c))
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gru_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(5);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            let n = t.len();
            t.data_mut()
                .copy_from_slice(Tensor::uniform(&[n], 0.8, &mut rng).data());
        }
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let h = Tensor::uniform(&[2, 4], 1.0, &mut rng);
        let coords = gradcheck::all_coords(&store);
        let probes = gradcheck::check(&mut store, &coords, 1e-5, |tape, store| {
            let xv = tape.constant(&x);
            let hv = tape.constant(&h);
            let o = gru.step(tape, store, xv, hv)?;
            let sq = tape.mul(o, o)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(gradcheck::max_relative_error(&probes, 1e-6) < 1e-5);
    }

    #[test]
    fn lstm_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(6);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 2, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            let n = t.len();
            t.data_mut()
                .copy_from_slice(Tensor::uniform(&[n], 0.8, &mut rng).data());
        }
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let h = Tensor::uniform(&[2, 2], 1.0, &mut rng);
        let c = Tensor::uniform(&[2, 2], 1.0, &mut rng);
        let coords = gradcheck::all_coords(&store);
        let probes = gradcheck::check(&mut store, &coords, 1e-5, |tape, store| {
            let (xv, hv, cv) = (tape.constant(&x), tape.constant(&h), tape.constant(&c));
            let s = lstm.step(tape, store, xv, LstmState { h: hv, c: cv })?;
            let both = tape.concat_cols(&[s.h, s.c])?;
            let sq = tape.mul(both, both)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(gradcheck::max_relative_error(&probes, 1e-6) < 1e-5);
    }

    #[test]
    fn blend_keeps_inactive_rows() {
        let mut tape = Tape::new();
        let old = tape.constant(&Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let new = tape.constant(&Tensor::new(vec![2, 2], vec![9.0, 9.0, 9.0, 9.0]).unwrap());
        let b = blend_rows(&mut tape, old, new, &[false, true]).unwrap();
        assert_eq!(tape.value(b), &[1.0, 2.0, 9.0, 9.0]);
    }
}
