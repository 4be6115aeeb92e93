//! Input embedding: a feature FC, day-of-week and time-of-day dictionaries
//! broadcast over sensors, and an adaptive `H × N × d_a` tensor, concatenated
//! to width `d_h = 3·d_f + d_a`.

use crate::autodiff::{Tape, Var};
use crate::data::DAYS_PER_WEEK;
use crate::error::{Error, Result};
use crate::params::{xavier_uniform, Bound, Linear, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub h: usize,
    pub n: usize,
    pub d: usize,
    pub d_f: usize,
    pub d_a: usize,
    pub steps_per_day: usize,
}

impl EmbeddingDims {
    pub fn d_h(&self) -> usize {
        3 * self.d_f + self.d_a
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub dims: EmbeddingDims,
    pub feature_fc: Linear,
    pub dow_table: ParamId,
    pub tod_table: ParamId,
    pub adaptive: ParamId,
}

impl Embedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: EmbeddingDims,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let EmbeddingDims {
            h,
            n,
            d,
            d_f,
            d_a,
            steps_per_day,
        } = dims;
        if [h, n, d, d_f, d_a, steps_per_day].contains(&0) {
            return Err(Error::Contract(format!("embedding extents must be positive: {dims:?}")));
        }
        let feature_fc = Linear::new(store, &format!("{prefix}.feature_fc"), d, d_f, rng);
        let dow_table = store.add(
            format!("{prefix}.dow_table"),
            xavier_uniform(&[DAYS_PER_WEEK, d_f], DAYS_PER_WEEK, d_f, rng),
        );
        let tod_table = store.add(
            format!("{prefix}.tod_table"),
            xavier_uniform(&[steps_per_day, d_f], steps_per_day, d_f, rng),
        );
        let adaptive = store.add(format!("{prefix}.adaptive"), xavier_uniform(&[h, n, d_a], d_a, d_a, rng));
        Ok(Embedding {
            dims,
            feature_fc,
            dow_table,
            tod_table,
            adaptive,
        })
    }

    pub fn param_count(dims: EmbeddingDims) -> usize {
        Linear::param_count(dims.d, dims.d_f)
            + (DAYS_PER_WEEK + dims.steps_per_day) * dims.d_f
            + dims.h * dims.n * dims.d_a
    }

    /// Per-position affine map `H×N×d → H×N×d_f`.
    pub fn embed_features<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, window: Var) -> Result<Var> {
        let EmbeddingDims { h, n, d, d_f, .. } = self.dims;
        if tape.shape(window) != [h, n, d] {
            return Err(Error::dim("embed_features", tape.shape(window), &[h, n, d]));
        }
        let rows = tape.reshape(window, &[h * n, d])?;
        let y = self.feature_fc.forward(tape, p, rows)?;
        tape.reshape(y, &[h, n, d_f])
    }

    /// Row `h` is `dow_table[dow[h]] ‖ tod_table[tod[h]]`, giving `H × 2d_f`.
    pub fn lookup_periodicity<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        dow: &[u8],
        tod: &[u16],
    ) -> Result<Var> {
        let h = self.dims.h;
        if dow.len() != h || tod.len() != h {
            return Err(Error::dim("lookup_periodicity", &[dow.len(), tod.len()], &[h, h]));
        }
        let dow: Vec<usize> = dow.iter().map(|&i| i as usize).collect();
        let tod: Vec<usize> = tod.iter().map(|&i| i as usize).collect();
        let w = tape.gather_rows(p.var(self.dow_table), &dow, "day_of_week")?;
        let t = tape.gather_rows(p.var(self.tod_table), &tod, "time_of_day")?;
        tape.concat(&[w, t], 1)
    }

    /// Full embedding of one history window.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        window: Var,
        dow: &[u8],
        tod: &[u16],
    ) -> Result<Var> {
        let feat = self.embed_features(tape, p, window)?;
        let period = self.lookup_periodicity(tape, p, dow, tod)?;
        assemble_embedding(tape, feat, period, p.var(self.adaptive), self.dims.d_h())
    }
}

/// Concatenates `feat (H×N×d_f) ‖ period (H×2d_f, broadcast over N) ‖
/// adaptive (H×N×d_a)` along the feature axis.
pub fn assemble_embedding<T: Scalar>(
    tape: &mut Tape<T>,
    feat: Var,
    period: Var,
    adaptive: Var,
    d_h: usize,
) -> Result<Var> {
    let (h, n, d_f) = match *tape.shape(feat) {
        [h, n, f] => (h, n, f),
        ref s => return Err(Error::dim("assemble_embedding(feat)", s, &[0, 0, 0])),
    };
    if tape.shape(period) != [h, 2 * d_f] {
        return Err(Error::dim("assemble_embedding(period)", tape.shape(period), &[h, 2 * d_f]));
    }
    let d_a = match *tape.shape(adaptive) {
        [ah, an, a] if ah == h && an == n => a,
        ref s => return Err(Error::dim("assemble_embedding(adaptive)", s, &[h, n, 0])),
    };
    if 3 * d_f + d_a != d_h {
        return Err(Error::dim("assemble_embedding(width)", &[d_f, 2 * d_f, d_a], &[d_h]));
    }
    let period = tape.reshape(period, &[h, 1, 2 * d_f])?;
    let period = tape.broadcast_to(period, &[h, n, 2 * d_f])?;
    tape.concat(&[feat, period, adaptive], 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{matmul, Tensor};

    fn dims() -> EmbeddingDims {
        EmbeddingDims {
            h: 4,
            n: 3,
            d: 2,
            d_f: 3,
            d_a: 5,
            steps_per_day: 288,
        }
    }

    fn build() -> (ParamStore<f64>, Embedding) {
        let mut store = ParamStore::new();
        let e = Embedding::new(&mut store, "emb", dims(), &mut RngStream::new(4, 0)).unwrap();
        (store, e)
    }

    fn window(seed: u64) -> Tensor<f64> {
        let mut rng = RngStream::new(seed, 9);
        Tensor::from_fn(&[4, 3, 2], |_| rng.normal())
    }

    #[test]
    fn counts_and_widths() {
        let (store, e) = build();
        assert_eq!(store.count(), Embedding::param_count(dims()));
        assert_eq!(e.dims.d_h(), 14);
        let reference = EmbeddingDims {
            h: 12,
            n: 170,
            d: 1,
            d_f: 24,
            d_a: 80,
            steps_per_day: 288,
        };
        assert_eq!(reference.d_h(), 152);
        assert_eq!(store.get(e.tod_table).shape(), &[288, 3]);
        assert_eq!(store.get(e.dow_table).shape(), &[7, 3]);
    }

    #[test]
    fn zero_window_zero_bias_gives_zero_features() {
        let (store, e) = build();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[4, 3, 2]));
        let f = e.embed_features(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(f), &[4, 3, 3]);
        assert!(tape.value(f).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn features_equal_per_position_matmul() {
        let (store, e) = build();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let w = window(1);
        let x = tape.constant(w.clone());
        let f = e.embed_features(&mut tape, &p, x).unwrap();
        let weight = store.get(e.feature_fc.weight);
        for pos in 0..12 {
            let row = Tensor::new(&[1, 2], w.data()[pos * 2..pos * 2 + 2].to_vec()).unwrap();
            let want = matmul(&row, weight).unwrap();
            for c in 0..3 {
                assert!((tape.value(f).data()[pos * 3 + c] - want.data()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lookup_equals_one_hot_matmul() {
        let (store, e) = build();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let dow = [0u8, 6, 3, 3];
        let tod = [0u16, 287, 100, 101];
        let out = e.lookup_periodicity(&mut tape, &p, &dow, &tod).unwrap();
        assert_eq!(tape.shape(out), &[4, 6]);
        let one_hot = |idx: usize, rows: usize| Tensor::from_fn(&[1, rows], |j| if j == idx { 1.0 } else { 0.0 });
        for h in 0..4 {
            let dw = matmul(&one_hot(dow[h] as usize, 7), store.get(e.dow_table)).unwrap();
            let tw = matmul(&one_hot(tod[h] as usize, 288), store.get(e.tod_table)).unwrap();
            let row = &tape.value(out).data()[h * 6..h * 6 + 6];
            assert_eq!(&row[..3], dw.data());
            assert_eq!(&row[3..], tw.data());
        }
    }

    #[test]
    fn out_of_range_index_names_axis() {
        let (store, e) = build();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let err = e.lookup_periodicity(&mut tape, &p, &[0, 7, 0, 0], &[0; 4]).unwrap_err();
        assert!(matches!(err, Error::Index { axis: "day_of_week", index: 7, .. }));
        let err = e.lookup_periodicity(&mut tape, &p, &[0; 4], &[0, 0, 288, 0]).unwrap_err();
        assert!(matches!(err, Error::Index { axis: "time_of_day", index: 288, .. }));
    }

    #[test]
    fn assembled_layout() {
        let (store, e) = build();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(window(2));
        let dow = [1u8; 4];
        let tod = [5u16, 6, 7, 8];
        let out = e.forward(&mut tape, &p, x, &dow, &tod).unwrap();
        let feat = e.embed_features(&mut tape, &p, x).unwrap();
        let v = tape.value(out).clone();
        assert_eq!(v.shape(), &[4, 3, 14]);
        let dow_row = &store.get(e.dow_table).data()[3..6];
        for h in 0..4 {
            for n in 0..3 {
                let row = &v.data()[(h * 3 + n) * 14..(h * 3 + n + 1) * 14];
                assert_eq!(&row[..3], &tape.value(feat).data()[(h * 3 + n) * 3..(h * 3 + n + 1) * 3]);
                assert_eq!(&row[3..6], dow_row);
                let a = &store.get(e.adaptive).data()[(h * 3 + n) * 5..(h * 3 + n + 1) * 5];
                assert_eq!(&row[9..], a);
            }
        }
    }

    #[test]
    fn flows_only_change_feature_columns() {
        let (store, e) = build();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let (dow, tod) = ([2u8; 4], [9u16, 10, 11, 12]);
        let x1 = tape.constant(window(3));
        let x2 = tape.constant(window(4));
        let a = e.forward(&mut tape, &p, x1, &dow, &tod).unwrap();
        let b = e.forward(&mut tape, &p, x2, &dow, &tod).unwrap();
        for (i, (u, v)) in tape.value(a).data().iter().zip(tape.value(b).data()).enumerate() {
            if i % 14 >= 3 {
                assert_eq!(u, v);
            }
        }
    }

    #[test]
    fn adaptive_receives_gradient_everywhere() {
        let (store, e) = build();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(window(5));
        let out = e.forward(&mut tape, &p, x, &[0; 4], &[0; 4]).unwrap();
        let sq = tape.unary(out, crate::autodiff::Unary::Square);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        let ga = g.get(p.var(e.adaptive)).unwrap();
        assert!(ga.data().iter().all(|v| *v != 0.0));
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut tape = Tape::<f64>::new();
        let feat = tape.constant(Tensor::zeros(&[2, 3, 2]));
        let period = tape.constant(Tensor::zeros(&[2, 4]));
        let adaptive = tape.constant(Tensor::zeros(&[2, 3, 5]));
        assert!(assemble_embedding(&mut tape, feat, period, adaptive, 11).is_ok());
        assert!(matches!(
            assemble_embedding(&mut tape, feat, period, adaptive, 12),
            Err(Error::Dimension { .. })
        ));
    }
}
