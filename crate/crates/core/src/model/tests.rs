use super::*;
use crate::series::calendar_row;
use crate::series::EpochHour;
use crate::tensor::gradcheck::{central_difference, GradCheckReport};

fn marks(start: i64, n: usize) -> Vec<CalendarRow> {
    (0..n as i64).map(|i| calendar_row(EpochHour(start + i))).collect()
}

struct Case {
    x: Vec<f64>,
    hm: Vec<CalendarRow>,
    fm: Vec<CalendarRow>,
}

impl Case {
    fn new(t: usize, h: usize, phase: f64) -> Self {
        let x = (0..t).map(|i| 5.0 + (i as f64 * 0.7 + phase).sin() + 0.1 * i as f64).collect();
        Case {
            x,
            hm: marks(447_072, t),
            fm: marks(447_072 + t as i64, h),
        }
    }

    fn input(&self) -> ModelInput<'_> {
        ModelInput {
            history_x: &self.x,
            history_marks: &self.hm,
            future_marks: &self.fm,
        }
    }
}

fn tiny() -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        label_len: Some(4),
        ..ModelConfig::tiny(16, 8, 8)
    }
}

#[test]
fn default_config_is_valid() {
    let c = ModelConfig::default();
    c.validate().unwrap();
    assert_eq!(c.label_len(), 48);
    assert_eq!(c.pyramid_lengths().unwrap(), vec![336, 167, 82]);
}

#[test]
fn config_rejections() {
    let bad = [
        ModelConfig { n_heads: 3, ..tiny() },
        ModelConfig { pyramid_depth: 2, ..tiny() },
        ModelConfig { label_len: Some(9), ..tiny() },
        ModelConfig { conv_kernel: 2, ..tiny() },
        ModelConfig { dropout: 1.0, ..tiny() },
        ModelConfig { horizon: 2, label_len: Some(1), ..tiny() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    let json = r#"{"d_model": 8, "bogus": 1}"#;
    assert!(serde_json::from_str::<ModelConfig>(json).is_err());
}

#[test]
fn ablation_names() {
    let mut a = Ablation::default();
    for n in Ablation::NAMES {
        a.enable(n).unwrap();
    }
    assert!(a.no_msm_pl && a.no_lad && a.no_upap && a.hard_mask);
    assert!(a.enable("no_everything").is_err());
}

#[test]
fn positional_encoding_rows() {
    let pe = positional_encoding(5, 6);
    assert_eq!(pe.shape(), &[5, 6]);
    assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!((pe.at2(1, 0) - 1f64.sin()).abs() < 1e-15);
    let f = (-(2.0 / 6.0) * 10000f64.ln()).exp();
    assert!((pe.at2(3, 3) - (3.0 * f).cos()).abs() < 1e-15);
}

#[test]
fn revin_round_trip_and_constant() {
    let x = [1.0, 4.0, 2.0, 9.0];
    let (z, st) = revin_normalize(&x, 1e-5);
    let m: f64 = z.iter().sum::<f64>() / 4.0;
    let v: f64 = z.iter().map(|a| a * a).sum::<f64>() / 4.0;
    assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    for (a, b) in z.iter().zip(x) {
        assert!((st.denormalize(*a) - b).abs() < 1e-12);
    }
    let (z, st) = revin_normalize(&[3.0; 5], 1e-5);
    assert!(z.iter().all(|&v| v == 0.0));
    assert_eq!(st.denormalize(0.0), 3.0);
}

#[test]
fn forward_shapes() {
    let c = tiny();
    let m = PeakFocus::new(c.clone(), Ablation::default(), 1).unwrap();
    let case = Case::new(16, 8, 0.0);
    let out = m.predict(&case.input()).unwrap();
    assert_eq!(out.y_intensity.len(), 8);
    assert_eq!(out.y_peak_prob.len(), 8);
    assert!(out.y_peak_prob.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(out.h_pl.shape(), &[8, 8]);
    assert_eq!(out.attention.len(), 2);
    for a in &out.attention {
        assert_eq!(a.shape(), &[8, 8]);
        for r in 0..8 {
            let s: f64 = (0..8).map(|j| a.at2(r, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    let wrong = ModelInput {
        history_x: &case.x[..15],
        ..case.input()
    };
    assert!(matches!(m.predict(&wrong), Err(Error::Shape(_))));
}

#[test]
fn every_ablation_runs() {
    let case = Case::new(16, 8, 0.3);
    for n in Ablation::NAMES {
        let mut a = Ablation::default();
        a.enable(n).unwrap();
        let m = PeakFocus::new(tiny(), a, 2).unwrap();
        let out = m.predict(&case.input()).unwrap();
        assert!(out.y_intensity.iter().all(|v| v.is_finite()), "{n}");
    }
}

#[test]
fn eval_is_deterministic_and_seeded() {
    let case = Case::new(16, 8, 0.1);
    let a = PeakFocus::new(tiny(), Ablation::default(), 7).unwrap();
    let b = PeakFocus::new(tiny(), Ablation::default(), 7).unwrap();
    let c = PeakFocus::new(tiny(), Ablation::default(), 8).unwrap();
    let (oa, ob, oc) = (
        a.predict(&case.input()).unwrap(),
        b.predict(&case.input()).unwrap(),
        c.predict(&case.input()).unwrap(),
    );
    assert_eq!(oa, ob);
    assert_ne!(oa.y_intensity, oc.y_intensity);
    assert_eq!(a.predict(&case.input()).unwrap(), oa);
}

/// Predictions commute with positive affine maps of the history.
#[test]
fn revin_equivariance() {
    let m = PeakFocus::new(tiny(), Ablation::default(), 3).unwrap();
    let case = Case::new(16, 8, 0.5);
    let base = m.predict(&case.input()).unwrap();
    let (a, b) = (3.5, -20.0);
    let moved = Case {
        x: case.x.iter().map(|v| a * v + b).collect(),
        ..Case::new(16, 8, 0.5)
    };
    let out = m.predict(&moved.input()).unwrap();
    for (p, q) in base.y_intensity.iter().zip(&out.y_intensity) {
        assert!((a * p + b - q).abs() < 1e-9 * (1.0 + q.abs()), "{p} {q}");
    }
    for (p, q) in base.y_peak_prob.iter().zip(&out.y_peak_prob) {
        assert!((p - q).abs() < 1e-12);
    }
}

/// A window's outputs do not depend on which other windows were processed.
#[test]
fn windows_are_independent() {
    let m = PeakFocus::new(tiny(), Ablation::default(), 4).unwrap();
    let c1 = Case::new(16, 8, 0.0);
    let c2 = Case::new(16, 8, 2.0);
    let alone = m.predict(&c1.input()).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g, false);
    let _ = m.forward(&mut g, &b, &c2.input(), false).unwrap();
    let f1 = m.forward(&mut g, &b, &c1.input(), false).unwrap();
    assert_eq!(g.value(f1.y_intensity).data(), &alone.y_intensity[..]);
}

/// With a zero locator signal the gate closes: every key is the key bias, so
/// attention is uniform regardless of the encoder context.
#[test]
fn closed_gate_gives_uniform_attention() {
    let c = tiny();
    let m = PeakFocus::new(c.clone(), Ablation::default(), 5).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g, false);
    let x_en = g.input(Tensor::full(&[8, 8], 0.7));
    let h_pl = g.input(Tensor::zeros(&[8, 8]));
    let x_dec = m.decoder_input(&Case::new(16, 8, 0.0).x);
    let (_, maps) = m.lad_decode(&mut g, &b, x_en, h_pl, &x_dec, false).unwrap();
    for a in maps {
        assert!(g.value(a).data().iter().all(|&v| (v - 0.125).abs() < 1e-12));
    }
}

#[test]
fn decoder_input_layout() {
    let m = PeakFocus::new(tiny(), Ablation::default(), 0).unwrap();
    let x: Vec<f64> = (0..16).map(f64::from).collect();
    assert_eq!(m.decoder_input(&x), vec![12.0, 13.0, 14.0, 15.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn checkpoint_compatibility() {
    let m = PeakFocus::new(tiny(), Ablation::default(), 0).unwrap();
    let back = PeakFocus::from_params(tiny(), Ablation::default(), m.params().clone()).unwrap();
    assert_eq!(back.params(), m.params());
    let ab = Ablation {
        no_msm_pl: true,
        ..Ablation::default()
    };
    assert!(matches!(
        PeakFocus::from_params(tiny(), ab, m.params().clone()),
        Err(Error::Checkpoint(_))
    ));
}

fn scalar_loss(m: &PeakFocus, case: &Case, g: &mut Graph, b: &Bound<'_>) -> Var {
    let fv = m.forward(g, b, &case.input(), false).unwrap();
    let wy = g.input(Tensor::column((0..8).map(|i| 0.3 + 0.1 * i as f64).collect()));
    let wp = g.input(Tensor::column((0..8).map(|i| 1.0 - 0.05 * i as f64).collect()));
    let y = g.mul(fv.y_norm, wy).unwrap();
    let p = g.mul(fv.peak_prob, wp).unwrap();
    let s = g.add(y, p).unwrap();
    let a = g.sum(fv.attention[1]);
    let s = g.sum(s);
    let s2 = g.mul(s, s).unwrap();
    let a = g.scale(a, 1e-3).unwrap();
    g.add(s2, a).unwrap()
}

/// End-to-end tape gradients agree with finite differences on a sample of
/// coordinates drawn from every parameter tensor.
#[test]
fn whole_model_gradcheck() {
    let c = ModelConfig { n_heads: 2, ..tiny() };
    let case = Case::new(16, 8, 0.9);
    for ab in [Ablation::default(), Ablation { no_msm_pl: true, no_lad: true, ..Ablation::default() }] {
        let mut m = PeakFocus::new(c.clone(), ab, 11).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, true);
        let loss = scalar_loss(&m, &case, &mut g, &b);
        g.backward(loss).unwrap();
        let analytic: Vec<Vec<f64>> = (0..m.params().len())
            .map(|i| g.grad(b.var_at(i)).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; m.params().tensor(i).len()]))
            .collect();
        drop(b);

        let mut report = GradCheckReport::default();
        for i in 0..m.params().len() {
            let n = m.params().tensor(i).len();
            let coords: Vec<usize> = if n <= 3 { (0..n).collect() } else { vec![0, n / 2, n - 1] };
            for j in coords {
                let mut data = m.params().tensor(i).data().to_vec();
                let numeric = central_difference(&mut data, j, 1e-5, |d| {
                    m.params_mut().tensor_mut(i).data_mut().copy_from_slice(d);
                    let mut g = Graph::new();
                    let b = m.bind(&mut g, false);
                    let l = scalar_loss(&m, &case, &mut g, &b);
                    g.value(l).item()
                })
                .unwrap();
                m.params_mut().tensor_mut(i).data_mut().copy_from_slice(&data);
                report.record(i, j, analytic[i][j], numeric);
            }
        }
        assert!(report.checked >= 50, "{}", report.checked);
        assert!(report.passes(1e-4), "{ab:?} {report:?} at {}", m.params().name(report.worst.unwrap().0));
    }
}
