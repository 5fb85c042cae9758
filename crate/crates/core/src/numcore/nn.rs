//! Layer building blocks recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Rng, Tape, Var, DEFAULT_INIT_SCALE};

/// `x · W + b` with `W: [in, out]` and `b: [out]`; `x` may be a vector or a
/// `[rows, in]` matrix.
pub fn affine(tape: &mut Tape, store: &ParamStore, x: Var, w_name: &str, b_name: &str) -> Result<Var> {
    let w = tape.param(store, w_name)?;
    let b = tape.param(store, b_name)?;
    let x_cols = *tape.shape(x).last().expect("nonempty shape");
    let w_shape = tape.shape(w).to_vec();
    if w_shape.len() != 2 || w_shape[0] != x_cols {
        return Err(Error::dim(
            "affine",
            format!("input {:?} does not match weight `{w_name}` {w_shape:?}", tape.shape(x)),
        ));
    }
    if tape.shape(b) != [w_shape[1]] {
        return Err(Error::dim(
            "affine",
            format!(
                "bias `{b_name}` {:?} does not match weight `{w_name}` {w_shape:?}",
                tape.shape(b)
            ),
        ));
    }
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Parameter names of one LSTM cell.
#[derive(Clone, Debug)]
pub struct LstmNames {
    pub w_input: String,
    pub w_hidden: String,
    pub bias: String,
}

impl LstmNames {
    pub fn new(prefix: &str) -> Self {
        LstmNames {
            w_input: format!("{prefix}.w_x"),
            w_hidden: format!("{prefix}.w_h"),
            bias: format!("{prefix}.b"),
        }
    }
}

/// Registers the parameters of an LSTM cell under `prefix`.
pub fn init_lstm(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<()> {
    let names = LstmNames::new(prefix);
    store.add_uniform(names.w_input, &[input, 4 * hidden], DEFAULT_INIT_SCALE, rng)?;
    store.add_uniform(names.w_hidden, &[hidden, 4 * hidden], DEFAULT_INIT_SCALE, rng)?;
    store.add_zeros(names.bias, &[4 * hidden])
}

/// One LSTM update. Gate pre-activations are laid out as
/// `[input | forget | output | candidate]`.
pub fn lstm_step(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    prefix: &str,
) -> Result<(Var, Var)> {
    let names = LstmNames::new(prefix);
    for n in [&names.w_input, &names.w_hidden, &names.bias] {
        if !store.contains(n) {
            return Err(Error::Config(format!("LSTM `{prefix}` is missing parameter `{n}`")));
        }
    }
    let hidden = tape.value(h_prev).len();
    if tape.value(c_prev).len() != hidden {
        return Err(Error::dim(
            "lstm_step",
            format!("h_prev {:?} vs c_prev {:?}", tape.shape(h_prev), tape.shape(c_prev)),
        ));
    }
    let wh = tape.param(store, &names.w_hidden)?;
    if tape.shape(wh) != [hidden, 4 * hidden] {
        return Err(Error::dim(
            "lstm_step",
            format!("`{}` {:?} vs hidden size {hidden}", names.w_hidden, tape.shape(wh)),
        ));
    }
    let from_x = affine(tape, store, x, &names.w_input, &names.bias)?;
    let from_h = tape.matmul(h_prev, wh)?;
    let gates = tape.add(from_x, from_h)?;
    let i_pre = tape.slice(gates, 0, hidden)?;
    let f_pre = tape.slice(gates, hidden, hidden)?;
    let o_pre = tape.slice(gates, 2 * hidden, hidden)?;
    let g_pre = tape.slice(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::DenseArray;

    fn mat(rows: usize, cols: usize, data: Vec<f64>) -> DenseArray {
        DenseArray::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn affine_identity_and_bias() {
        let mut s = ParamStore::new();
        s.insert("w", mat(2, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        s.insert("b", DenseArray::vector(vec![0.0, 0.0])).unwrap();
        s.insert("w2", mat(2, 2, vec![3.0, -1.0, 2.0, 7.0])).unwrap();
        s.insert("b2", DenseArray::vector(vec![0.5, -0.5])).unwrap();
        let mut t = Tape::new();
        let x = t.constant_vec(vec![1.0, 0.0]);
        let y = affine(&mut t, &s, x, "w", "b").unwrap();
        assert_eq!(t.data(y), &[1.0, 0.0]);
        let z = t.constant_vec(vec![0.0, 0.0]);
        let y2 = affine(&mut t, &s, z, "w2", "b2").unwrap();
        assert_eq!(t.data(y2), &[0.5, -0.5]);
    }

    #[test]
    fn affine_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let (m, k, n) = (3, 4, 5);
        let xs: Vec<f64> = (0..m * k).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let ws: Vec<f64> = (0..k * n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let bs: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let mut s = ParamStore::new();
        s.insert("w", mat(k, n, ws.clone())).unwrap();
        s.insert("b", DenseArray::vector(bs.clone())).unwrap();
        let mut t = Tape::new();
        let x = t.constant(mat(m, k, xs.clone()));
        let y = affine(&mut t, &s, x, "w", "b").unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut acc = bs[j];
                for p in 0..k {
                    acc += xs[i * k + p] * ws[p * n + j];
                }
                assert!((t.data(y)[i * n + j] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn affine_shape_mismatch() {
        let mut s = ParamStore::new();
        s.insert("w", DenseArray::zeros(&[3, 2])).unwrap();
        s.insert("b", DenseArray::zeros(&[2])).unwrap();
        let mut t = Tape::new();
        let x = t.constant_vec(vec![1.0, 2.0]);
        let err = affine(&mut t, &s, x, "w", "b").unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn lstm_zero_weights_give_zero_state() {
        let mut s = ParamStore::new();
        s.add_zeros("l.w_x", &[3, 8]).unwrap();
        s.add_zeros("l.w_h", &[2, 8]).unwrap();
        s.add_zeros("l.b", &[8]).unwrap();
        let mut t = Tape::new();
        let x = t.zeros(&[3]);
        let h0 = t.zeros(&[2]);
        let c0 = t.zeros(&[2]);
        let (h, c) = lstm_step(&mut t, &s, x, h0, c0, "l").unwrap();
        assert_eq!(t.data(h), &[0.0, 0.0]);
        assert_eq!(t.data(c), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_single_unit_scalar_recurrence() {
        // Gate order [i, f, o, g]; one input, one hidden unit.
        let wx = [0.5, -0.3, 0.8, 0.2];
        let wh = [0.1, 0.4, -0.6, 0.9];
        let b = [0.05, 1.0, -0.2, 0.0];
        let mut s = ParamStore::new();
        s.insert("u.w_x", mat(1, 4, wx.to_vec())).unwrap();
        s.insert("u.w_h", mat(1, 4, wh.to_vec())).unwrap();
        s.insert("u.b", DenseArray::vector(b.to_vec())).unwrap();
        let (x, h0, c0) = (0.7, -0.2, 0.3);
        let mut t = Tape::new();
        let xv = t.constant_vec(vec![x]);
        let hv = t.constant_vec(vec![h0]);
        let cv = t.constant_vec(vec![c0]);
        let (h, c) = lstm_step(&mut t, &s, xv, hv, cv, "u").unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let pre = |k: usize| wx[k] * x + wh[k] * h0 + b[k];
        let (i, f, o, g) = (sig(pre(0)), sig(pre(1)), sig(pre(2)), pre(3).tanh());
        let c_exp = f * c0 + i * g;
        let h_exp = o * c_exp.tanh();
        assert!((t.data(c)[0] - c_exp).abs() < 1e-15);
        assert!((t.data(h)[0] - h_exp).abs() < 1e-15);
    }

    #[test]
    fn lstm_missing_prefix_is_config_error() {
        let s = ParamStore::new();
        let mut t = Tape::new();
        let x = t.zeros(&[1]);
        let h = t.zeros(&[1]);
        let c = t.zeros(&[1]);
        assert!(matches!(lstm_step(&mut t, &s, x, h, c, "nope"), Err(Error::Config(_))));
    }
}
