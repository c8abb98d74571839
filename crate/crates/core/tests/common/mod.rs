//! Helpers shared by integration test targets.
#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsebench::neural::{Mode, Network};

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Tensors with at least one checked coordinate.
    pub tensors_checked: usize,
    pub worst: Option<(String, usize, f64, f64)>,
}

fn signs(net: &Network<f64>, x: ArrayView2<f64>, mode: Mode) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tr = net.forward(x, mode, &mut rng).unwrap();
    tr.kink_inputs().iter().flat_map(|a| a.iter().map(|&v| v > 0.0).collect::<Vec<_>>()).collect()
}

fn loss(net: &Network<f64>, x: ArrayView2<f64>, y: &[f64], mode: Mode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tr = net.forward(x, mode, &mut rng).unwrap();
    Network::loss(&tr, y).unwrap()
}

/// Central differences with step `h` against `Network::backward`, on up to
/// `per_tensor` coordinates of every parameter tensor.
pub fn grad_check(net: &mut Network<f64>, x: &Array2<f64>, y: &[f64], mode: Mode, h: f64, per_tensor: usize) -> GradCheck {
    assert!(mode != Mode::Train, "gradient checks need a deterministic pass");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = net.forward(x.view(), mode, &mut rng).unwrap();
    let grads = net.backward(&trace, y).unwrap();
    let base_signs = signs(net, x.view(), mode);
    let mut out = GradCheck::default();
    let mut pick = ChaCha8Rng::seed_from_u64(99);
    for t in 0..net.params().len() {
        let len = net.params()[t].len();
        let coords: Vec<usize> =
            if len <= per_tensor { (0..len).collect() } else { sample(&mut pick, len, per_tensor).into_vec() };
        let mut any = false;
        for c in coords {
            let orig = net.params()[t].as_slice().unwrap()[c];
            net.params_mut()[t].as_slice_mut().unwrap()[c] = orig + h;
            let up = loss(net, x.view(), y, mode);
            let up_signs = signs(net, x.view(), mode);
            net.params_mut()[t].as_slice_mut().unwrap()[c] = orig - h;
            let down = loss(net, x.view(), y, mode);
            let down_signs = signs(net, x.view(), mode);
            net.params_mut()[t].as_slice_mut().unwrap()[c] = orig;
            if up_signs != base_signs || down_signs != base_signs {
                out.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let g = &grads.tensors[t];
            let analytic = g[[c / g.ncols(), c % g.ncols()]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            out.checked += 1;
            any = true;
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = Some((net.param_names()[t].clone(), c, analytic, numeric));
            }
        }
        if any {
            out.tensors_checked += 1;
        }
    }
    out
}
