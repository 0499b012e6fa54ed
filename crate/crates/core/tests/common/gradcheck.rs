use nbv::net::{Mode, NetConfig, ParamKind, UtilityNet};
use nbv::seed;
use rand::Rng;

pub const KINDS: [ParamKind; 5] = [ParamKind::ConvWeight, ParamKind::BnScale, ParamKind::BnShift, ParamKind::FcWeight, ParamKind::FcBias];

pub struct KindResult {
    pub kind: ParamKind,
    pub probes: usize,
    pub max_rel: f64,
    /// Largest analytic gradient magnitude among the probes.
    pub max_abs: f64,
}

/// Reduced net: 8×8×4 input, one block of two units.
pub fn reduced_config() -> NetConfig {
    NetConfig {
        n_blocks: 1,
        units_per_block: 2,
        filters_increment: 30,
        hidden1: 96,
        hidden2: 32,
        input_dims: [8, 8, 4],
        input_channels: 6,
        lambda: 1e-3,
        dropout_rate: 0.5,
        ..NetConfig::default()
    }
}

/// Central differences against the analytic gradient for `probes` distinct
/// random parameters of every kind. Batch-norm uses fixed (randomized)
/// running statistics; dropout masks are replayed from a fixed seed.
pub fn run(cfg: NetConfig, mode: Mode, probes: usize, h: f64, batch: usize) -> Vec<KindResult> {
    let mut net = UtilityNet::<f64>::new(cfg.clone()).unwrap();
    let mut r = seed::rng(77);
    for s in net.segments().to_vec() {
        for p in &mut net.params_mut()[s.offset..s.offset + s.len] {
            match s.kind {
                ParamKind::BnScale => *p = r.random_range(0.5..1.5),
                ParamKind::BnShift | ParamKind::FcBias => *p = r.random_range(-0.2..0.2),
                _ => {}
            }
        }
    }
    let mean: Vec<Vec<f64>> = net.running_mean().iter().map(|v| v.iter().map(|_| r.random_range(-0.3..0.3)).collect()).collect();
    let var: Vec<Vec<f64>> = net.running_var().iter().map(|v| v.iter().map(|_| r.random_range(0.5..2.0)).collect()).collect();
    net.set_running_stats(mean, var).unwrap();
    let x: Vec<f32> = (0..batch * cfg.input_len()).map(|_| r.random::<f32>()).collect();
    let y: Vec<f64> = (0..batch).map(|_| r.random_range(0.0..2.0)).collect();
    let lg0 = net.loss_and_grad(&x, &y, mode, &mut seed::rng(5)).unwrap();
    let analytic = lg0.grads;
    let mut out = Vec::new();
    for kind in KINDS {
        let idx: Vec<usize> = net
            .segments()
            .iter()
            .filter(|s| s.kind == kind)
            .flat_map(|s| s.offset..s.offset + s.len)
            .collect();
        let picks = rand::seq::index::sample(&mut r, idx.len(), probes.min(idx.len()));
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for k in picks.iter() {
            let i = idx[k];
            let p0 = net.params()[i];
            net.params_mut()[i] = p0 + h;
            let lp = net.loss(&x, &y, mode, &mut seed::rng(5)).unwrap();
            net.params_mut()[i] = p0 - h;
            let lm = net.loss(&x, &y, mode, &mut seed::rng(5)).unwrap();
            net.params_mut()[i] = p0;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(a.abs());
        }
        out.push(KindResult { kind, probes: picks.len(), max_rel, max_abs });
    }
    out
}
