//! Hospitalization-series ingestion and offline outbreak detection.
//!
//! The input CSV has columns `date,region,hospitalized` (ISO-8601 dates).
//! Together with a capacity map `region → V` (total beds), each region
//! becomes a daily series `X_n = (V − H_n)/V` — the fraction of beds still
//! free — which is modeled as a Gaussian epidemic stream: pre-outbreak the
//! depletion rate is a small constant `p*`, an outbreak multiplies it.
//!
//! `detect_offline` calibrates `p*` per region from a leading window by
//! least squares on `X_n ≈ (1−p*) X_{n−1}`, builds a grid of candidate
//! outbreak rates `{q·p* : q ∈ q_grid}`, and replays the series through
//! the detector.  Reports are emitted as a decision JSON, a per-day trace
//! CSV and an SVG plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::detector::{DecisionOutcome, Detector, DetectorConfig, WindowMode};
use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::hyper::hyperparams_from_beta;
use crate::matrices::{ErrorMatrix, ThresholdMatrix};
use crate::models::{ModelSpec, Regime, StreamState};
use crate::prior::GeometricPrior;
use crate::thresholds::thresholds_optimal;

/// One region's aligned daily series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSeries {
    pub region: String,
    pub dates: Vec<NaiveDate>,
    pub hospitalized: Vec<u64>,
    /// Total bed capacity `V`.
    pub capacity: u64,
    /// `X_n = (V − H_n)/V`.
    pub x: Vec<f64>,
}

impl RegionSeries {
    pub fn new(
        region: String,
        dates: Vec<NaiveDate>,
        hospitalized: Vec<u64>,
        capacity: u64,
    ) -> Result<Self> {
        if dates.len() != hospitalized.len() || dates.is_empty() {
            return Err(Error::Input(format!(
                "region {region}: {} dates but {} counts",
                dates.len(),
                hospitalized.len()
            )));
        }
        if capacity == 0 {
            return Err(Error::Input(format!("region {region}: capacity must be positive")));
        }
        for w in dates.windows(2) {
            let gap = (w[1] - w[0]).num_days();
            if gap != 1 {
                return Err(Error::Input(format!(
                    "region {region}: dates must be consecutive days, found {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        let v = capacity as f64;
        let x = hospitalized
            .iter()
            .map(|&h| (v - h as f64) / v)
            .collect();
        Ok(Self {
            region,
            dates,
            hospitalized,
            capacity,
            x,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Parse the `date,region,hospitalized` CSV and align all regions over
/// their common date range.  Every region must appear in the capacity
/// map; problems are collected and reported together.
pub fn ingest_csv<R: std::io::Read>(
    reader: R,
    capacities: &BTreeMap<String, u64>,
) -> Result<Vec<RegionSeries>> {
    #[derive(Deserialize)]
    struct Row {
        date: String,
        region: String,
        hospitalized: u64,
    }
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut per_region: BTreeMap<String, Vec<(NaiveDate, u64)>> = BTreeMap::new();
    let mut problems: Vec<String> = Vec::new();
    for (idx, row) in csv_reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Input(format!("row {}: {e}", idx + 2)))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|_| {
            Error::Input(format!("row {}: unparseable date {:?}", idx + 2, row.date))
        })?;
        if !per_region.contains_key(&row.region) {
            order.push(row.region.clone());
        }
        per_region
            .entry(row.region)
            .or_default()
            .push((date, row.hospitalized));
    }
    if per_region.is_empty() {
        return Err(Error::Input("no data rows".into()));
    }
    for region in &order {
        if !capacities.contains_key(region) {
            problems.push(format!("no capacity entry for region {region}"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Input(problems.join("; ")));
    }
    // Common range: latest start to earliest end.
    let start = per_region
        .values()
        .map(|rows| rows.iter().map(|r| r.0).min().unwrap())
        .max()
        .unwrap();
    let end = per_region
        .values()
        .map(|rows| rows.iter().map(|r| r.0).max().unwrap())
        .min()
        .unwrap();
    if start > end {
        return Err(Error::Input(
            "regions have disjoint date ranges; no common window to align".into(),
        ));
    }
    let mut out = Vec::with_capacity(order.len());
    for region in order {
        let mut rows = per_region.remove(&region).unwrap();
        rows.sort_by_key(|r| r.0);
        rows.dedup_by_key(|r| r.0);
        let rows: Vec<(NaiveDate, u64)> = rows
            .into_iter()
            .filter(|r| r.0 >= start && r.0 <= end)
            .collect();
        let expected = (end - start).num_days() as usize + 1;
        if rows.len() != expected {
            problems.push(format!(
                "region {region}: {} days present in the common range {start}..{end}, expected {expected} (gaps rejected)",
                rows.len()
            ));
            continue;
        }
        let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
        let counts: Vec<u64> = rows.iter().map(|r| r.1).collect();
        match RegionSeries::new(region.clone(), dates, counts, capacities[&region]) {
            Ok(series) => out.push(series),
            Err(e) => problems.push(e.to_string()),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Input(problems.join("; ")));
    }
    Ok(out)
}

/// Write series back in the ingestion format (`date,region,hospitalized`).
pub fn write_series_csv<W: std::io::Write>(series: &[RegionSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "region", "hospitalized"])?;
    if series.is_empty() {
        w.flush()?;
        return Ok(());
    }
    for day in 0..series[0].len() {
        for s in series {
            w.write_record([
                s.dates[day].format("%Y-%m-%d").to_string(),
                s.region.clone(),
                s.hospitalized[day].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pre-change depletion rate fitted from the first `window` days.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Calibration {
    pub p_star: f64,
    pub se: f64,
    /// Whether the raw estimate left `(1e-6, 1−1e-6)` and was clamped.
    pub clamped: bool,
}

/// Least-squares fit of `X_n = (1−p*) X_{n−1} + noise` on the first
/// `window` days: `p* = 1 − Σ X_n X_{n−1} / Σ X²_{n−1}`, clamped into
/// `(1e-6, 1−1e-6)`.
pub fn calibrate_pre_change(series: &RegionSeries, window: usize) -> Result<Calibration> {
    if window < 2 || window > series.len() {
        return Err(Error::invalid(format!(
            "calibration window must lie in [2, {}], got {window}",
            series.len()
        )));
    }
    let x = &series.x[..window];
    let mut num = 0.0;
    let mut den = 0.0;
    for n in 1..window {
        num += x[n] * x[n - 1];
        den += x[n - 1] * x[n - 1];
    }
    if den == 0.0 {
        return Err(Error::numerical(format!(
            "region {}: calibration window is identically zero",
            series.region
        )));
    }
    let raw = 1.0 - num / den;
    let coef = num / den;
    // Residual variance of the one-coefficient regression.
    let dof = (window as f64 - 2.0).max(1.0);
    let ss_res: f64 = (1..window)
        .map(|n| {
            let e = x[n] - coef * x[n - 1];
            e * e
        })
        .sum();
    let se = (ss_res / dof / den).sqrt();
    let clamped = !(1e-6..=(1.0 - 1e-6)).contains(&raw);
    let p_star = raw.clamp(1e-6, 1.0 - 1e-6);
    Ok(Calibration {
        p_star,
        se,
        clamped,
    })
}

/// Options for the offline detection run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectOptions {
    /// Candidate outbreak multipliers; the grid for region `i` is
    /// `{q·p*_i}` filtered to `(p*_i, 1)`.
    pub q_grid: Vec<f64>,
    /// Constraint level: `β_{i,j} = beta_epsilon/(i+j)`.
    pub beta_epsilon: f64,
    pub k_check: f64,
    /// Days used for pre-change calibration.
    pub calibration_window: usize,
    /// Explicit pre-change rates, overriding calibration.
    pub p_star_override: Option<Vec<f64>>,
    /// Explicit thresholds, overriding the `β`-derived optimal matrix.
    pub thresholds_override: Option<ThresholdMatrix>,
    /// Optional window-limited mode.
    pub window: Option<usize>,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            q_grid: (0..10).map(|k| 1.05 + 0.05 * k as f64).collect(),
            beta_epsilon: 0.3,
            k_check: 2.0,
            calibration_window: 21,
            p_star_override: None,
            thresholds_override: None,
            window: None,
        }
    }
}

/// One row of the per-day statistic trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub date: NaiveDate,
    pub region: String,
    pub x: f64,
    pub log_l: f64,
    pub log_lhat: f64,
    pub log_u_diag: f64,
}

/// Result of an offline run over historical series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResult {
    pub outcome: DecisionOutcome,
    pub detection_date: Option<NaiveDate>,
    pub region: Option<String>,
    pub calibration: Vec<Calibration>,
    pub traces: Vec<TraceRow>,
    /// Days on which a zero free-bed fraction had to be guarded before
    /// LLR evaluation.
    pub zero_state_days: u64,
}

/// Replay the aligned series through the detector.
///
/// Day 0 seeds the Markov states; detection steps run over days `1..`.
/// A reported stopping time `T` therefore lands on calendar date
/// `dates[T]`.
pub fn detect_offline(series: &[RegionSeries], opts: &DetectOptions) -> Result<DetectionResult> {
    if series.is_empty() {
        return Err(Error::Input("no regions to analyze".into()));
    }
    let n = series.len();
    let len = series[0].len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::Input("series are not aligned".into()));
    }
    if len < 2 {
        return Err(Error::Input("need at least two days of data".into()));
    }

    let mut calibration = Vec::with_capacity(n);
    match &opts.p_star_override {
        Some(ps) => {
            if ps.len() != n {
                return Err(Error::Dimension(format!(
                    "{} p_star overrides for {n} regions",
                    ps.len()
                )));
            }
            for &p in ps {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::invalid("p_star override outside (0, 1)"));
                }
                calibration.push(Calibration {
                    p_star: p,
                    se: 0.0,
                    clamped: false,
                });
            }
        }
        None => {
            for s in series {
                calibration.push(calibrate_pre_change(s, opts.calibration_window.min(s.len()))?);
            }
        }
    }

    let mut models = Vec::with_capacity(n);
    let mut grids = Vec::with_capacity(n);
    for (i, s) in series.iter().enumerate() {
        let p_star = calibration[i].p_star;
        let x0 = guard_state(s.x[0]);
        models.push(ModelSpec::epidemic_gaussian(
            p_star,
            s.capacity as f64,
            x0,
        )?);
        let points: Vec<Vec<f64>> = opts
            .q_grid
            .iter()
            .map(|&q| q * p_star)
            .filter(|&t| t > p_star && t < 1.0)
            .map(|t| vec![t])
            .collect();
        if points.is_empty() {
            return Err(Error::invalid(format!(
                "region {}: no admissible outbreak rates in the grid",
                s.region
            )));
        }
        grids.push(ParameterGrid::uniform(points)?);
    }

    let beta = ErrorMatrix::scaled_inverse_sum(n, opts.beta_epsilon)?;
    let hp = hyperparams_from_beta(&beta, opts.k_check, 1.0)?;
    let thresholds = match &opts.thresholds_override {
        Some(a) => {
            if a.n() != n {
                return Err(Error::Dimension("threshold matrix size mismatch".into()));
            }
            a.clone()
        }
        None => thresholds_optimal(&beta, &hp)?,
    };
    let prior = GeometricPrior::new(hp.rho_opt)?;
    let window = match opts.window {
        Some(w) => WindowMode::Limited(w),
        None => WindowMode::Full,
    };
    let config = DetectorConfig::new(prior, grids).with_window(window);
    let states: Vec<StreamState> = series
        .iter()
        .map(|s| StreamState::scalar(guard_state(s.x[0])))
        .collect();
    let mut detector = Detector::new(&config, &models, states)?;

    let mut zero_state_days = 0u64;
    let mut traces = Vec::with_capacity((len - 1) * n);
    let mut outcome: Option<DecisionOutcome> = None;
    for day in 1..len {
        let mut obs = Vec::with_capacity(n);
        for s in series {
            let x = s.x[day];
            if x == 0.0 {
                zero_state_days += 1;
            }
            obs.push(vec![guard_state(x)]);
        }
        detector.update(&obs)?;
        for (i, s) in series.iter().enumerate() {
            traces.push(TraceRow {
                date: s.dates[day],
                region: s.region.clone(),
                x: s.x[day],
                log_l: detector.log_l(i),
                log_lhat: detector.log_l_hat(i),
                log_u_diag: detector.log_u(i, i),
            });
        }
        if outcome.is_none() {
            outcome = detector.decision_step(&thresholds);
            if outcome.is_some() {
                break;
            }
        }
    }
    let outcome = outcome.unwrap_or(DecisionOutcome {
        stopped: false,
        time: detector.n(),
        stream: None,
        statistic_snapshot: detector.log_u_matrix(),
    });
    let detection_date = outcome
        .stopped
        .then(|| series[0].dates[outcome.time as usize]);
    let region = outcome
        .stream
        .map(|d| series[d.index()].region.clone());
    Ok(DetectionResult {
        outcome,
        detection_date,
        region,
        calibration,
        traces,
        zero_state_days,
    })
}

/// The transition density is undefined at exactly zero; feed the LLR a
/// displaced value instead and count the event.
fn guard_state(x: f64) -> f64 {
    if x == 0.0 {
        crate::models::STATE_CLAMP
    } else {
        x
    }
}

/// Report formats for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

/// Write the selected report files into `dir`:
/// `trace.csv`, `decision.json` and/or `report.svg`.
pub fn emit_report(
    result: &DetectionResult,
    series: &[RegionSeries],
    dir: &Path,
    formats: &[ReportFormat],
    reference_date: Option<NaiveDate>,
) -> Result<Vec<std::path::PathBuf>> {
    if result.traces.is_empty() {
        return Err(Error::invalid("nothing to report: empty trace"));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Csv => {
                let path = dir.join("trace.csv");
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["date", "region", "x", "log_L", "log_Lhat", "log_U_diag"])?;
                for row in &result.traces {
                    w.write_record([
                        row.date.format("%Y-%m-%d").to_string(),
                        row.region.clone(),
                        format!("{}", row.x),
                        format!("{}", row.log_l),
                        format!("{}", row.log_lhat),
                        format!("{}", row.log_u_diag),
                    ])?;
                }
                w.flush()?;
                written.push(path);
            }
            ReportFormat::Json => {
                let path = dir.join("decision.json");
                let payload = serde_json::json!({
                    "stopped": result.outcome.stopped,
                    "T": result.outcome.time,
                    "d": result.outcome.stream,
                    "region": result.region,
                    "detection_date": result.detection_date,
                    "snapshot": result.outcome.statistic_snapshot,
                    "calibration": result.calibration,
                    "zero_state_days": result.zero_state_days,
                });
                std::fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
                written.push(path);
            }
            ReportFormat::Svg => {
                let path = dir.join("report.svg");
                std::fs::write(&path, render_svg(series, result, reference_date))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

const SVG_PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Line plot of the free-bed fractions with vertical markers for the
/// detection date (solid) and an optional reference date (dashed).
pub fn render_svg(
    series: &[RegionSeries],
    result: &DetectionResult,
    reference_date: Option<NaiveDate>,
) -> String {
    let (width, height) = (900.0, 480.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 50.0);
    let plot_w = width - ml - mr;
    let plot_h = height - mt - mb;
    let days = series.first().map_or(0, |s| s.len());
    let lo = series
        .iter()
        .flat_map(|s| s.x.iter().cloned())
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let hi = series
        .iter()
        .flat_map(|s| s.x.iter().cloned())
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1.0);
    let sx = |day: usize| ml + plot_w * day as f64 / (days.max(2) - 1) as f64;
    let sy = |v: f64| mt + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    // Axes.
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
        mt + plot_h
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">free-bed fraction by day</text>",
        ml + plot_w / 2.0,
        height - 12.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let mut points = String::new();
        for (day, &v) in s.x.iter().enumerate() {
            let _ = write!(points, "{:.2},{:.2} ", sx(day), sy(v));
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            ml + plot_w + 2.0 - 55.0,
            mt + 14.0 * (i as f64 + 1.0),
            s.region
        );
    }
    if let (Some(date), true) = (result.detection_date, !series.is_empty()) {
        if let Some(day) = series[0].dates.iter().position(|&d| d == date) {
            let x = sx(day);
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.2}\" y1=\"{mt}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"blue\" stroke-width=\"1.5\"/>",
                mt + plot_h
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"blue\">detected {date}</text>",
                x + 4.0,
                mt + 12.0
            );
        }
    }
    if let Some(date) = reference_date {
        if let Some(day) = series
            .first()
            .and_then(|s| s.dates.iter().position(|&d| d == date))
        {
            let x = sx(day);
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.2}\" y1=\"{mt}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"red\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>",
                mt + plot_h
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"red\">reference {date}</text>",
                x + 4.0,
                mt + 26.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Synthesize aligned regional series from the epidemic model: every
/// region drifts at its pre-outbreak rate, and `outbreak_region` (if any)
/// switches to `q·p*` after `outbreak_day`.  Hospitalized counts are the
/// rounded complement of the simulated free fraction.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_outbreak(
    regions: &[(&str, u64, f64)], // (name, capacity, p_star)
    start: NaiveDate,
    days: usize,
    outbreak_region: Option<usize>,
    outbreak_day: usize,
    q: f64,
    seed: u64,
) -> Result<Vec<RegionSeries>> {
    use rand::SeedableRng;
    let mut out = Vec::with_capacity(regions.len());
    for (i, &(name, capacity, p_star)) in regions.iter().enumerate() {
        let model = ModelSpec::epidemic_gaussian(p_star, capacity as f64, 1.0)?;
        let theta = [q * p_star];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
            seed ^ (0x5D_5245_47 + i as u64 * 0x1_0000_0001),
        );
        let mut state = model.initial_state();
        let mut xs = vec![1.0f64];
        for day in 1..days {
            let regime = match outbreak_region {
                Some(r) if r == i && day > outbreak_day => Regime::Post(&theta),
                _ => Regime::Pre,
            };
            let (obs, next) = model.simulate_step(regime, &state, &mut rng)?;
            state = next;
            xs.push(obs[0]);
        }
        let dates: Vec<NaiveDate> = (0..days)
            .map(|d| start + chrono::Duration::days(d as i64))
            .collect();
        let hospitalized: Vec<u64> = xs
            .iter()
            .map(|&x| {
                let h = ((1.0 - x) * capacity as f64).round();
                h.clamp(0.0, capacity as f64) as u64
            })
            .collect();
        out.push(RegionSeries::new(
            name.to_string(),
            dates,
            hospitalized,
            capacity,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|&(r, v)| (r.to_string(), v)).collect()
    }

    #[test]
    fn ingest_computes_free_fraction() {
        let csv = "date,region,hospitalized\n2020-02-24,Lombardia,100\n2020-02-25,Lombardia,150\n";
        let series = ingest_csv(csv.as_bytes(), &caps(&[("Lombardia", 1000)])).unwrap();
        assert_eq!(series.len(), 1);
        assert!((series[0].x[0] - 0.9).abs() < 1e-15);
        // H = 0 gives X = 1.
        let csv = "date,region,hospitalized\n2020-02-24,A,0\n2020-02-25,A,0\n";
        let series = ingest_csv(csv.as_bytes(), &caps(&[("A", 10)])).unwrap();
        assert_eq!(series[0].x[0], 1.0);
    }

    #[test]
    fn ingest_rejects_missing_capacity_and_disjoint_ranges() {
        let csv = "date,region,hospitalized\n2020-01-01,A,1\n2020-01-02,A,1\n";
        assert!(matches!(
            ingest_csv(csv.as_bytes(), &caps(&[("B", 10)])),
            Err(Error::Input(_))
        ));

        let csv = "date,region,hospitalized\n\
                   2020-01-01,A,1\n2020-01-02,A,1\n\
                   2020-03-01,B,1\n2020-03-02,B,1\n";
        assert!(matches!(
            ingest_csv(csv.as_bytes(), &caps(&[("A", 10), ("B", 10)])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn ingest_rejects_gaps() {
        let csv = "date,region,hospitalized\n2020-01-01,A,1\n2020-01-03,A,1\n";
        assert!(ingest_csv(csv.as_bytes(), &caps(&[("A", 10)])).is_err());
    }

    #[test]
    fn series_round_trip_preserves_x() {
        let regions = [("north", 9000u64, 0.008f64), ("south", 12000, 0.01)];
        let series = synthesize_outbreak(
            &regions,
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            30,
            None,
            0,
            1.2,
            7,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_series_csv(&series, &mut buf).unwrap();
        let capacities = caps(&[("north", 9000), ("south", 12000)]);
        let back = ingest_csv(buf.as_slice(), &capacities).unwrap();
        for (a, b) in series.iter().zip(&back) {
            assert_eq!(a.region, b.region);
            for (x, y) in a.x.iter().zip(&b.x) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn calibration_recovers_noiseless_drift() {
        let dates: Vec<NaiveDate> = (0..40)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(d))
            .collect();
        let v = 1_000_000u64;
        let mut x = 1.0f64;
        let mut hosp = Vec::new();
        for _ in 0..40 {
            hosp.push(((1.0 - x) * v as f64).round() as u64);
            x *= 0.99;
        }
        let series = RegionSeries::new("A".into(), dates, hosp, v).unwrap();
        let cal = calibrate_pre_change(&series, 30).unwrap();
        assert!((cal.p_star - 0.01).abs() < 1e-6, "{}", cal.p_star);
        assert!(!cal.clamped);
    }

    #[test]
    fn calibration_clamps_constant_series() {
        let dates: Vec<NaiveDate> = (0..10)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(d))
            .collect();
        let series = RegionSeries::new("A".into(), dates, vec![0; 10], 100).unwrap();
        let cal = calibrate_pre_change(&series, 10).unwrap();
        assert!(cal.clamped);
        assert_eq!(cal.p_star, 1e-6);
    }

    #[test]
    fn calibration_rejects_zero_window() {
        let dates: Vec<NaiveDate> = (0..5)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(d))
            .collect();
        // All beds occupied: X ≡ 0.
        let series = RegionSeries::new("A".into(), dates, vec![100; 5], 100).unwrap();
        assert!(calibrate_pre_change(&series, 5).is_err());
    }

    #[test]
    fn calibration_close_to_truth_on_simulated_path() {
        let regions = [("A", 20_000u64, 0.01f64)];
        let series = synthesize_outbreak(
            &regions,
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            40,
            None,
            0,
            1.2,
            3,
        )
        .unwrap();
        let cal = calibrate_pre_change(&series[0], 30).unwrap();
        assert!(
            (cal.p_star - 0.01).abs() <= 3.0 * cal.se.max(1e-4),
            "p*={} se={}",
            cal.p_star,
            cal.se
        );
    }

    fn outbreak_fixture(seed: u64) -> Vec<RegionSeries> {
        let regions = [
            ("north", 10_000u64, 0.0095f64),
            ("south", 15_000, 0.0105),
            ("east", 20_000, 0.0100),
            ("west", 25_000, 0.0090),
            ("central", 30_000, 0.0102),
        ];
        synthesize_outbreak(
            &regions,
            NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
            70,
            Some(2),
            20,
            1.25,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn detect_offline_flags_injected_outbreak() {
        let series = outbreak_fixture(41);
        let result = detect_offline(&series, &DetectOptions::default()).unwrap();
        assert!(result.outcome.stopped, "no detection");
        assert_eq!(result.region.as_deref(), Some("east"));
        let date = result.detection_date.unwrap();
        assert!(date > NaiveDate::from_ymd_opt(2020, 2, 21).unwrap());
        // Date/index consistency.
        let t = result.outcome.time as usize;
        assert_eq!(series[0].dates[t], date);
    }

    #[test]
    fn detect_offline_quiet_on_pre_change_data() {
        let regions = [
            ("north", 10_000u64, 0.0095f64),
            ("south", 15_000, 0.0105),
        ];
        let opts = DetectOptions {
            beta_epsilon: 0.01,
            k_check: 1.23,
            calibration_window: 30,
            // Start the outbreak grid at 1.10: calibration noise of a
            // couple of standard errors then stays closer to the null
            // than to any grid point.
            q_grid: (0..9).map(|k| 1.10 + 0.05 * k as f64).collect(),
            ..DetectOptions::default()
        };
        let mut detections = 0;
        for seed in 0..20 {
            let series = synthesize_outbreak(
                &regions,
                NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
                60,
                None,
                0,
                1.2,
                seed,
            )
            .unwrap();
            let result = detect_offline(&series, &opts).unwrap();
            if result.outcome.stopped {
                detections += 1;
            }
        }
        // Calibration noise occasionally leaves a stream's null nearly
        // driftless against the lowest grid rate, so rare alarms on quiet
        // data are a property of estimate-then-detect, not a bug; with
        // the pre-change rates known exactly they vanish (see the
        // acceptance suite).
        assert!(detections <= 1, "{detections}/20 false alarms");

        let known = DetectOptions {
            p_star_override: Some(vec![0.0095, 0.0105]),
            ..opts.clone()
        };
        for seed in 0..20 {
            let series = synthesize_outbreak(
                &regions,
                NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
                60,
                None,
                0,
                1.2,
                seed,
            )
            .unwrap();
            let result = detect_offline(&series, &known).unwrap();
            assert!(!result.outcome.stopped, "seed {seed} alarmed with known rates");
        }
    }

    #[test]
    fn debug_quiet_alarms() {
        let regions = [
            ("north", 10_000u64, 0.0095f64),
            ("south", 15_000, 0.0105),
        ];
        let opts = DetectOptions {
            beta_epsilon: 0.01,
            k_check: 1.23,
            calibration_window: 30,
            // Start the outbreak grid at 1.10: calibration noise of a
            // couple of standard errors then stays closer to the null
            // than to any grid point.
            q_grid: (0..9).map(|k| 1.10 + 0.05 * k as f64).collect(),
            ..DetectOptions::default()
        };
        for seed in 0..20 {
            let series = synthesize_outbreak(
                &regions,
                NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
                60, None, 0, 1.2, seed,
            ).unwrap();
            let result = detect_offline(&series, &opts).unwrap();
            if result.outcome.stopped {
                println!("seed {seed}: ALARM day {} region {:?}", result.outcome.time, result.region);
                println!("  calib: {:?}", result.calibration);
                println!("  snapshot: {:?}", result.outcome.statistic_snapshot);
            }
        }
    }

    #[test]
    fn emit_report_writes_all_formats() {
        let series = outbreak_fixture(43);
        let result = detect_offline(&series, &DetectOptions::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("sqdi-report-{}", std::process::id()));
        let files = emit_report(
            &result,
            &series,
            &dir,
            &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
            NaiveDate::from_ymd_opt(2020, 3, 8),
        )
        .unwrap();
        assert_eq!(files.len(), 3);
        let svg = std::fs::read_to_string(dir.join("report.svg")).unwrap();
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("detected"));
        let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
        assert!(trace.starts_with("date,region,x,log_L,log_Lhat,log_U_diag"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn svg_without_detection_has_no_marker() {
        let regions = [("north", 10_000u64, 0.0095f64), ("south", 15_000, 0.0105)];
        let series = synthesize_outbreak(
            &regions,
            NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
            10,
            None,
            0,
            1.2,
            5,
        )
        .unwrap();
        let result = detect_offline(&series, &DetectOptions::default()).unwrap();
        if !result.outcome.stopped {
            let svg = render_svg(&series, &result, None);
            assert!(!svg.contains("detected"));
            assert!(svg.matches("<polyline").count() == 2);
        }
    }

    #[test]
    fn minimal_two_day_trace_renders() {
        let dates: Vec<NaiveDate> = (0..2)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(d))
            .collect();
        let series = vec![
            RegionSeries::new("A".into(), dates.clone(), vec![5, 6], 100).unwrap(),
            RegionSeries::new("B".into(), dates, vec![3, 4], 100).unwrap(),
        ];
        let result = detect_offline(
            &series,
            &DetectOptions {
                calibration_window: 2,
                p_star_override: Some(vec![0.01, 0.01]),
                ..DetectOptions::default()
            },
        )
        .unwrap();
        assert_eq!(result.traces.len(), 2);
        let svg = render_svg(&series, &result, None);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
