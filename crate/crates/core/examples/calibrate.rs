//! Development probe: ensemble-averaged Allan minima of the shipped calibration.
use comparator_core::dsp::SquareWaveProtocol;
use comparator_core::sim::*;

fn ensemble(curves: &[(Vec<f64>, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let taus = curves[0].0.clone();
    let mut mean_sq = vec![0.0; taus.len()];
    for (_, sigmas) in curves {
        for (m, s) in mean_sq.iter_mut().zip(sigmas) {
            *m += s * s / curves.len() as f64;
        }
    }
    (taus, mean_sq.iter().map(|m| m.sqrt()).collect())
}

/// Fit sigma^2 = a/tau + b*tau; return (tau*, sigma_min).
fn fit_min(taus: &[f64], sigmas: &[f64]) -> (f64, f64) {
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &s) in taus.iter().zip(sigmas) {
        let (x1, x2, y) = (1.0 / t, t, s * s);
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        r1 += x1 * y;
        r2 += x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    let a = (r1 * s22 - r2 * s12) / det;
    let b = (s11 * r2 - s12 * r1) / det;
    ((a / b).sqrt(), (2.0 * (a * b).sqrt()).sqrt())
}

fn main() {
  for base in [1000u64, 3000, 5000, 7000] {
    let t0 = std::time::Instant::now();
    let mut curves = Vec::new();
    for seed in 0..8u64 {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.seed = base + seed;
        let drive = Drive::Ac { frequency_hz: 67.0, amplitude_a: 1.0 };
        let opts = AllanCampaignOptions {
            total_duration: 2500.0,
            taus: vec![],
            window_s: 1.0,
            time_scale: 1.0,
            sample_rate: Some(2010.0),
        };
        let report = run_allan_campaign(&cfg, &drive, &opts).unwrap();
        let a = report.allan.unwrap();
        curves.push((a.curve.taus, a.curve.sigmas));
    }
    let (taus, sig) = ensemble(&curves);
    let argmin = sig.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
    let (tstar, smin) = fit_min(&taus, &sig);
    println!(
        "AC ensemble: argmin {:.1} pT at {:.0} s; fit min {:.1} pT at tau* {:.0} s; {:?}",
        sig[argmin.0] * 1e12, taus[argmin.0], smin * 1e12, tstar, t0.elapsed()
    );

    let t0 = std::time::Instant::now();
    let mut curves = Vec::new();
    for seed in 0..8u64 {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.seed = base + 100 + seed;
        cfg.sample_rate = 200.0;
        let proto = SquareWaveProtocol::new(1.0, 0.5, 1).unwrap();
        let drive = Drive::DcSquare { amplitude_a: 1.0, protocol: proto };
        let opts = AllanCampaignOptions {
            total_duration: 24_000.0,
            taus: vec![],
            window_s: 1.0,
            time_scale: 1.0,
            sample_rate: None,
        };
        let report = run_allan_campaign(&cfg, &drive, &opts).unwrap();
        let a = report.allan.unwrap();
        curves.push((a.curve.taus, a.curve.sigmas));
    }
    let (taus, sig) = ensemble(&curves);
    let argmin = sig.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
    let (tstar, smin) = fit_min(&taus, &sig);
    println!(
        "DC ensemble: argmin {:.1} pT at {:.0} s; fit min {:.1} pT at tau* {:.0} s; {:?}",
        sig[argmin.0] * 1e12, taus[argmin.0], smin * 1e12, tstar, t0.elapsed()
    );
  }
}
