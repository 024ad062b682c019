//! Flat-file interfaces: two-column CSV time series, JSON campaign
//! reports, and plot-ready CSV extracts. Column units are embedded in
//! the headers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::CampaignReport;
use crate::timeseries::TimeSeries;

pub const TIMESERIES_HEADER: &str = "time_s,field_T";
pub const ALLAN_HEADER: &str = "tau_s,sigma_T,sigma_A,ci";

/// Maximum relative jitter tolerated when inferring the sample rate.
const SPACING_TOLERANCE: f64 = 1e-6;

/// Write a series as `time_s,field_T` rows. Values use Rust's shortest
/// round-trip float formatting, so load(write(x)) reproduces the samples
/// exactly.
pub fn write_timeseries(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.as_ref().display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{TIMESERIES_HEADER}")?;
    for (i, &x) in series.samples().iter().enumerate() {
        writeln!(w, "{},{}", series.time_at(i), x)?;
    }
    Ok(())
}

/// Load a two-column `(time_s, field_T)` CSV, header optional. Time must
/// increase strictly and uniformly within 1e-6 relative jitter; the
/// sample rate is inferred from the span.
pub fn load_timeseries(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let file = File::open(path.as_ref())
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.as_ref().display())))?;
    let reader = BufReader::new(file);
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let row = lineno + 1;
        let line = line.map_err(|e| Error::data(format!("row {row}: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split(',');
        let (a, b) = (fields.next().unwrap_or(""), fields.next().unwrap_or(""));
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t), Ok(x)) => {
                times.push(t);
                values.push(x);
                rows.push(row);
            }
            _ if row == 1 => continue, // header line
            _ => {
                return Err(Error::data(format!(
                    "row {row}: expected two numeric columns, got '{trimmed}'"
                )))
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::data("need at least two samples"));
    }

    let dt_nominal = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt_nominal > 0.0) {
        return Err(Error::data("time must increase over the record"));
    }
    for i in 1..times.len() {
        let dt = times[i] - times[i - 1];
        if dt <= 0.0 {
            return Err(Error::data(format!(
                "row {}: time not strictly increasing ({} after {})",
                rows[i],
                times[i],
                times[i - 1]
            )));
        }
        if ((dt - dt_nominal) / dt_nominal).abs() > SPACING_TOLERANCE {
            return Err(Error::data(format!(
                "row {}: non-uniform spacing {dt:e} s vs nominal {dt_nominal:e} s",
                rows[i]
            )));
        }
    }
    TimeSeries::new(1.0 / dt_nominal, times[0], values)
}

/// Serialize a campaign report as pretty JSON.
pub fn write_report(report: &CampaignReport, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.as_ref().display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<CampaignReport> {
    let file = File::open(path.as_ref())
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.as_ref().display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Emit the plot-ready CSV analogs present in the report: amplitude
/// spectrum, frequency sweep, linearity sweep, Allan curve, DC cycles.
/// Returns the files written.
pub fn emit_plotdata(report: &CampaignReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();

    if let Some(ac) = &report.ac {
        if let Some(spec) = &ac.spectrum {
            let path = dir.join("spectrum.csv");
            let mut w = csv_writer(&path)?;
            writeln!(w, "frequency_Hz,amplitude_T,amplitude_A")?;
            for i in 0..spec.frequency_hz.len() {
                writeln!(
                    w,
                    "{},{},{}",
                    spec.frequency_hz[i], spec.amplitude_t[i], spec.amplitude_a[i]
                )?;
            }
            written.push(path);
        }
        if !ac.cells.is_empty() {
            let path = dir.join("frequency_sweep.csv");
            let mut w = csv_writer(&path)?;
            writeln!(
                w,
                "frequency_Hz,amplitude_A,current_diff_A,se_current_diff_A,ratio_error_A_per_A"
            )?;
            for c in &ac.cells {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    c.frequency_hz,
                    c.amplitude_a,
                    c.mean_current_diff_a,
                    c.se_current_diff_a,
                    c.ratio_error
                )?;
            }
            written.push(path);

            let path = dir.join("linearity.csv");
            let mut w = csv_writer(&path)?;
            writeln!(w, "amplitude_A,frequency_Hz,current_diff_A,se_current_diff_A")?;
            for c in &ac.cells {
                writeln!(
                    w,
                    "{},{},{},{}",
                    c.amplitude_a, c.frequency_hz, c.mean_current_diff_a, c.se_current_diff_a
                )?;
            }
            written.push(path);
        }
    }

    if let Some(allan) = &report.allan {
        let path = dir.join("allan.csv");
        let mut w = csv_writer(&path)?;
        writeln!(w, "{ALLAN_HEADER}")?;
        for i in 0..allan.curve.taus.len() {
            writeln!(
                w,
                "{},{},{},{}",
                allan.curve.taus[i],
                allan.curve.sigmas[i],
                allan.sigma_current_a[i],
                allan.curve.ci_rel(i)
            )?;
        }
        written.push(path);
    }

    if let Some(dc) = &report.dc {
        let path = dir.join("dc_cycles.csv");
        let mut w = csv_writer(&path)?;
        writeln!(w, "cycle,step_T,step_A")?;
        let k = dc.mean_step_t / dc.current_diff_a;
        for (i, &step) in dc.per_cycle_t.iter().enumerate() {
            let step_a = if dc.current_diff_a != 0.0 { step / k } else { 0.0 };
            writeln!(w, "{i},{step},{step_a}")?;
        }
        written.push(path);
    }

    Ok(written)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::data(format!("cannot create {}: {e}", path.display()))
    })?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::dft_bin_amplitude;

    #[test]
    fn timeseries_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        let ts = TimeSeries::from_fn(10_000.0, 0.0, 5000, |t| {
            (std::f64::consts::TAU * 67.0 * t).sin() * 1e-9
        })
        .unwrap();
        write_timeseries(&ts, &path).unwrap();
        let back = load_timeseries(&path).unwrap();
        assert_eq!(back.samples(), ts.samples());
        assert!((back.sample_rate() / ts.sample_rate() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_timestamp_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.csv");
        std::fs::write(&path, "time_s,field_T\n0.0,1.0\n0.1,1.0\n0.1,1.0\n0.3,1.0\n").unwrap();
        let err = load_timeseries(&path).unwrap_err();
        assert!(err.to_string().contains("row 4"), "{err}");
    }

    #[test]
    fn nonnumeric_row_rejected_with_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time_s,field_T\n0.0,1.0\n0.1,abc\n").unwrap();
        let err = load_timeseries(&path).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn nonuniform_spacing_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jitter.csv");
        std::fs::write(&path, "0.0,1.0\n0.1,1.0\n0.25,1.0\n0.3,1.0\n").unwrap();
        assert!(load_timeseries(&path).is_err());
    }

    #[test]
    fn external_sine_extracts_through_pipeline() {
        // Cross-tool oracle: a generator-written file analyzed by the
        // DFT extraction reproduces the generator amplitude.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.csv");
        let fs = 10_000.0;
        let mut rows = String::from("time_s,field_T\n");
        for i in 0..10_000 {
            let t = i as f64 / fs;
            rows.push_str(&format!(
                "{t},{}\n",
                38e-9 * (std::f64::consts::TAU * 67.0 * t).sin()
            ));
        }
        std::fs::write(&path, rows).unwrap();
        let ts = load_timeseries(&path).unwrap();
        let a = dft_bin_amplitude(&ts, 67.0).unwrap();
        assert!((a / 38e-9 - 1.0).abs() < 1e-6, "{a:e}");
    }

    #[test]
    fn report_json_round_trip_and_plotdata_headers() {
        use crate::sim::{run_ac_campaign, AcCampaignOptions, ComparatorConfig};
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.sample_rate = 2010.0;
        let report = run_ac_campaign(
            &cfg,
            &[67.0],
            &[1.0],
            &AcCampaignOptions {
                window_s: 1.0,
                repeats: 2,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&report, &path).unwrap();
        let back = load_report(&path).unwrap();
        assert_eq!(report, back);

        let files = emit_plotdata(&report, dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("spectrum.csv")));
        let spectrum = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
        assert!(spectrum.starts_with("frequency_Hz,amplitude_T,amplitude_A"));
        // Peak row sits at the excitation frequency.
        let mut best = (0.0_f64, 0.0_f64);
        for line in spectrum.lines().skip(1) {
            let mut f = line.split(',');
            let freq: f64 = f.next().unwrap().parse().unwrap();
            let amp: f64 = f.nth(1).unwrap().parse().unwrap();
            if amp > best.1 {
                best = (freq, amp);
            }
        }
        assert_eq!(best.0, 67.0);
    }

    #[test]
    fn allan_plotfile_header_exact() {
        use crate::sim::{run_allan_campaign, AllanCampaignOptions, ComparatorConfig, Drive};
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.sample_rate = 670.0;
        let report = run_allan_campaign(
            &cfg,
            &Drive::Ac {
                frequency_hz: 67.0,
                amplitude_a: 1.0,
            },
            &AllanCampaignOptions {
                total_duration: 30.0,
                taus: vec![1.0, 2.0, 5.0],
                window_s: 1.0,
                time_scale: 1.0,
                sample_rate: None,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plotdata(&report, dir.path()).unwrap();
        let allan_path = files.iter().find(|p| p.ends_with("allan.csv")).unwrap();
        let text = std::fs::read_to_string(allan_path).unwrap();
        assert!(text.starts_with("tau_s,sigma_T,sigma_A,ci\n"));
    }
}
