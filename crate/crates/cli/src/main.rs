//! `tbrfi`: simulate time-tag streams, analyze them into per-block
//! estimates and key rates, sweep phase-drift tolerance, and calibrate the
//! coincidence delays.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data-format
//! error, 4 zero secret key (`keyrate` only), 1 anything else.

mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tbrfi_core::config::RunConfig;
use tbrfi_core::keyrate::{
    asymptotic_rate, block_rate, calibration_report, finite_key, ChannelEstimate, KeyResult, REFERENCE_NUMERICAL_RATE,
};
use tbrfi_core::montecarlo::{analytic_threshold, sweep_drift_rates, threshold_search, SweepRow};
use tbrfi_core::photonics::{expected_coincidence_rate, TagSimulator};
use tbrfi_core::pipeline::{analyze_files, Analysis};
use tbrfi_core::tagfile::{read_tags, Side, TagHeader, TagWriter};
use tbrfi_core::tags::{calibrate, collect_delays, histogram_from_delays};

use output::{num, write_csv, write_json, FileEntry, Manifest};

#[derive(Parser)]
#[command(name = "tbrfi", version, about = "Passive time-bin RFI-QKD simulation and analysis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Named parameter set used as the base; values in --config override it.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: `output_dir` from the config].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run duration, s.
    #[arg(long, global = true, value_name = "SECONDS")]
    duration: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write Alice and Bob tag files and a manifest.
    Simulate,
    /// Per-block estimates and a finite-key report from two tag files.
    Analyze(TagInputs),
    /// Monte Carlo C-parameter and key rate against drift rate.
    Sweep {
        /// `start:stop:step` or a comma-separated list, rad/s.
        #[arg(long, value_name = "GRID")]
        rate_grid: Option<String>,
    },
    /// Asymptotic and finite-size key rate for one channel estimate.
    Keyrate(KeyrateArgs),
    /// Delay histogram and slot-triplet fit from two tag files.
    Calibrate(TagInputs),
}

#[derive(Args)]
struct TagInputs {
    /// [default: <out>/alice.tags]
    #[arg(long, value_name = "FILE")]
    alice: Option<PathBuf>,
    /// [default: <out>/bob.tags]
    #[arg(long, value_name = "FILE")]
    bob: Option<PathBuf>,
}

#[derive(Args)]
struct KeyrateArgs {
    /// JSON estimate, e.g. the `estimate.json` written by `analyze`.
    /// Flags below override its fields.
    #[arg(long, value_name = "FILE")]
    estimate: Option<PathBuf>,
    /// Raw coincidences N.
    #[arg(long)]
    n_total: Option<u64>,
    /// Key-map QBER.
    #[arg(long)]
    qber: Option<f64>,
    #[arg(long)]
    c64: Option<f64>,
    /// Key-map coincidences n [default: N/6].
    #[arg(long)]
    n_keymap: Option<u64>,
    /// [default: N/6]
    #[arg(long)]
    m_xx: Option<u64>,
    /// [default: N/6]
    #[arg(long)]
    m_yx: Option<u64>,
    /// Orientation of (E_xx, E_yx), rad [default: worst case].
    #[arg(long)]
    phase: Option<f64>,
    /// Error-correction efficiency.
    #[arg(long)]
    f: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

/// An error carrying its exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    msg: String,
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Exit {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Exit {
        code: 2,
        msg: msg.into(),
    }
    .into()
}

fn data(msg: impl Into<String>) -> anyhow::Error {
    Exit {
        code: 3,
        msg: msg.into(),
    }
    .into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use tbrfi_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Exit>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidParameter { .. } | E::InvalidLayout(_) | E::Domain { .. } => 2,
                E::Format(_) | E::UnsortedInput { .. } | E::NoPeaks(_) | E::EmptyBlock(_) | E::ZeroSamples(_) => 3,
                E::Io(_) => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Simulate => simulate(&cfg).map(|_| 0),
        Command::Analyze(inputs) => analyze(&cfg, &inputs).map(|_| 0),
        Command::Sweep { rate_grid } => sweep(&cfg, rate_grid.as_deref()).map(|_| 0),
        Command::Keyrate(args) => keyrate(&cfg, &args),
        Command::Calibrate(inputs) => calibrate_cmd(&cfg, &inputs).map(|_| 0),
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), preset) => RunConfig::load_with_preset(path, preset.as_deref())?,
        (None, Some(preset)) => RunConfig::preset(preset)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = Some(seed);
    }
    if let Some(d) = c.duration {
        cfg.duration = d;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_seed(cfg: &RunConfig, command: &str) -> Result<u64> {
    cfg.seed.ok_or_else(|| {
        usage(format!(
            "`{command}` needs a seed: set `seed` in the config or pass --seed"
        ))
    })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let seed = require_seed(cfg, "simulate")?;
    let dir = out_dir(cfg)?;
    let layout = cfg.coincidence.layout.clone();
    let mut sim = TagSimulator::new(
        cfg.duration,
        cfg.source.clone(),
        cfg.channel.clone(),
        layout.clone(),
        seed,
    )?;
    let (pa, pb) = (dir.join("alice.tags"), dir.join("bob.tags"));
    let mut wa = TagWriter::create(&pa, &TagHeader::binary(&layout.name, Side::Alice))?;
    let mut wb = TagWriter::create(&pb, &TagHeader::binary(&layout.name, Side::Bob))?;
    while let Some(chunk) = sim.next_chunk() {
        wa.write(&chunk.alice)?;
        wb.write(&chunk.bob)?;
    }
    let truth = *sim.truth();
    let (na, nb) = (wa.commit()?, wb.commit()?);

    let expected = expected_coincidence_rate(&cfg.source, &cfg.channel);
    println!(
        "simulated {:.3} s (seed {seed}): {na} Alice tags, {nb} Bob tags, {} coincident pairs \
         (model {expected:.0} coincidences/s)",
        cfg.duration, truth.coincident_pairs
    );
    let toml = cfg.to_toml_string();
    let mut m = Manifest::new("simulate", &toml, Some(seed));
    m.outputs = vec![FileEntry::output(&pa)?, FileEntry::output(&pb)?];
    m.summary = Some(json!({
        "duration_s": cfg.duration,
        "alice_tags": na,
        "bob_tags": nb,
        "expected_coincidence_rate": expected,
        "truth": truth,
    }));
    let path = m.save(dir, &toml)?;
    println!("wrote {}, {}, {}", pa.display(), pb.display(), path.display());
    Ok(())
}

fn tag_paths(cfg: &RunConfig, inputs: &TagInputs) -> (PathBuf, PathBuf) {
    (
        inputs
            .alice
            .clone()
            .unwrap_or_else(|| cfg.output_dir.join("alice.tags")),
        inputs.bob.clone().unwrap_or_else(|| cfg.output_dir.join("bob.tags")),
    )
}

const SERIES_COLUMNS: [(&str, &str); 23] = [
    ("block_start", "block start, s from the tag-clock origin"),
    ("block_duration", "s"),
    ("n_total", "classified coincidences in the block"),
    ("n_zz", "key-map (ZZ) coincidences"),
    ("n_xx", "XX coincidences"),
    ("n_yx", "YX coincidences"),
    ("e_xx", "XX correlation"),
    ("e_xx_err", "1-sigma"),
    ("e_yx", "YX correlation"),
    ("e_yx_err", "1-sigma"),
    ("c64", "C-parameter, clipped to 1"),
    ("c64_err", "1-sigma"),
    ("c_clipped", "1 when the raw C exceeded 1"),
    ("qber_z", "key-map QBER"),
    ("qber_z_err", "1-sigma"),
    ("qber_x", "superposition-basis QBER, (1 - C)/2"),
    ("qber_x_err", "1-sigma"),
    ("phase", "atan2(e_yx, e_xx), rad, wrapped to (-pi, pi]"),
    ("phase_err", "1-sigma, rad"),
    ("phase_unwrapped", "continuous phase, rad"),
    ("asymptotic_rate", "secret bits per coincidence"),
    ("asymptotic_rate_err", "1-sigma, first-order propagation"),
    ("gap_reason", "why the block has no estimate; empty otherwise"),
];

fn series_rows(an: &Analysis) -> Vec<Vec<String>> {
    an.series
        .iter()
        .map(|p| {
            let mut row = vec![num(p.block_start), num(p.block_duration)];
            match &p.estimate {
                Some(e) => {
                    let r = block_rate(e);
                    row.extend([
                        e.n_total.to_string(),
                        e.n_zz.to_string(),
                        e.n_xx.to_string(),
                        e.n_yx.to_string(),
                        num(e.e_xx.value),
                        num(e.e_xx.error),
                        num(e.e_yx.value),
                        num(e.e_yx.error),
                        num(e.c64.value),
                        num(e.c64.error),
                        u8::from(e.c_clipped).to_string(),
                        num(e.qber_z.value),
                        num(e.qber_z.error),
                        num(e.qber_x.value),
                        num(e.qber_x.error),
                        num(e.phase.value),
                        num(e.phase.error),
                        num(e.phase_unwrapped),
                        num(r.value),
                        num(r.error),
                        String::new(),
                    ]);
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 20));
                    row.push(p.gap_reason.clone().unwrap_or_default());
                }
            }
            row
        })
        .collect()
}

#[derive(Serialize)]
struct KeyReport<'a> {
    duration_s: Option<f64>,
    counters: tbrfi_core::pipeline::Counters,
    estimate: Option<ChannelEstimate>,
    asymptotic_rate: Option<f64>,
    secret_bits: u64,
    /// Default reading; absent when a needed basis has no counts.
    finite_key: Option<&'a KeyResult>,
    readings: &'a [KeyResult],
    note: Option<String>,
}

fn analyze(cfg: &RunConfig, inputs: &TagInputs) -> Result<()> {
    let (pa, pb) = tag_paths(cfg, inputs);
    let an = analyze_files(&pa, &pb, &cfg.coincidence, cfg.block_duration)?;
    let dir = out_dir(cfg)?;
    let series_path = dir.join("series.csv");
    write_csv(&series_path, &SERIES_COLUMNS, &series_rows(&an))?;

    let estimate = an.channel_estimate();
    let (result, readings) = match &estimate {
        Some(est) => (
            Some(finite_key(est, &cfg.security)?),
            calibration_report(est, &cfg.security)?,
        ),
        None => (None, Vec::new()),
    };
    let report = KeyReport {
        duration_s: an.blocks.last().map(|b| b.block_start + b.block_duration),
        counters: an.counters,
        estimate,
        asymptotic_rate: estimate.map(|e| asymptotic_rate(e.q_z, e.c64)),
        secret_bits: result.as_ref().map_or(0, |r| r.secret_bits),
        finite_key: result.as_ref(),
        readings: &readings,
        note: estimate
            .is_none()
            .then(|| "no coincidences in at least one of ZZ, XX, YX; no key".to_string()),
    };
    let report_path = dir.join("key_report.json");
    write_json(&report_path, &report)?;
    let mut outputs = vec![FileEntry::output(&series_path)?, FileEntry::output(&report_path)?];
    if let Some(est) = &estimate {
        let p = dir.join("estimate.json");
        write_json(&p, est)?;
        outputs.push(FileEntry::output(&p)?);
    }

    let blocks = an.estimates().count();
    println!(
        "{} coincidences ({} unclassified) in {} blocks, {blocks} with estimates",
        an.counters.coincidences,
        an.counters.unclassified,
        an.series.len()
    );
    match (an.run_estimate(), &result) {
        (Some(e), Some(r)) => println!(
            "run: qber_z {:.4}, qber_x {:.4}, C {:.4}, asymptotic {:.4} bits/coinc, finite key {:.5} ({} bits)",
            e.qber_z.value, e.qber_x.value, e.c64.value, r.asymptotic_rate, r.rate, r.secret_bits
        ),
        _ => println!("run: no complete estimate, zero key"),
    }
    let toml = cfg.to_toml_string();
    let mut m = Manifest::new("analyze", &toml, cfg.seed);
    m.inputs = vec![FileEntry::of(&pa)?, FileEntry::of(&pb)?];
    m.outputs = outputs;
    let path = m.save(dir, &toml)?;
    println!(
        "wrote {}, {}, {}",
        series_path.display(),
        report_path.display(),
        path.display()
    );
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || {
        usage(format!(
            "bad --rate-grid `{s}`: expected start:stop:step or a comma-separated list"
        ))
    };
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
    let grid: Vec<f64> = if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(parse).collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + k as f64 * step).collect()
    } else {
        s.split(',').map(parse).collect::<Result<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

const SWEEP_COLUMNS: [(&str, &str); 8] = [
    ("rate", "drift rate, rad/s"),
    ("total_phase_change", "phase change over one block, rad"),
    ("mean_c", "Monte Carlo mean of the block C-parameter"),
    ("std_c", "standard deviation over trials"),
    ("analytic_c", "C0 |sinc(total_phase_change / 2)|"),
    ("asymptotic_rate", "secret bits per coincidence at mean_c"),
    ("analytic_asymptotic_rate", "secret bits per coincidence at analytic_c"),
    ("trials", "Monte Carlo trials"),
];

fn sweep(cfg: &RunConfig, grid: Option<&str>) -> Result<()> {
    let seed = require_seed(cfg, "sweep")?;
    let rates = match grid {
        Some(g) => parse_grid(g)?,
        None => cfg.sweep.rates.clone(),
    };
    let mut template = cfg.drift_template();
    template.seed = seed;
    let rows = sweep_drift_rates(&rates, &template)?;
    let dir = out_dir(cfg)?;
    let path = dir.join("sweep.csv");
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.rate),
                num(r.total_phase_change),
                num(r.result.mean_c),
                num(r.result.std_c),
                num(r.result.analytic_c),
                num(r.asymptotic_rate),
                num(r.analytic_asymptotic_rate),
                r.result.trials.to_string(),
            ]
        })
        .collect();
    write_csv(&path, &SWEEP_COLUMNS, &table)?;

    let fraction = cfg.sweep.threshold_fraction;
    let mc = threshold_search(&rows, fraction, |r: &SweepRow| r.asymptotic_rate);
    let analytic = analytic_threshold(
        template.visibility_z,
        template.visibility_xy,
        template.block_time,
        fraction,
    );
    let baseline = rows
        .iter()
        .filter(|r| r.rate >= 0.0)
        .min_by(|a, b| a.rate.total_cmp(&b.rate));
    let at_one = rows.iter().find(|r| (r.rate - 1.0).abs() < 1e-9);
    let drop_at_one = match (baseline, at_one) {
        (Some(b), Some(o)) => Some(1.0 - o.result.mean_c / b.result.mean_c),
        _ => None,
    };
    let fmt_opt = |x: Option<f64>| x.map_or("not reached".to_string(), |v| format!("{v:.3} rad/s"));
    println!(
        "{} rates, {} trials each, N = {}, t_N = {} s",
        rows.len(),
        template.trials,
        template.n_signals,
        template.block_time
    );
    if let Some(d) = drop_at_one {
        println!("C drop at 1 rad/s: {:.2}%", 100.0 * d);
    }
    println!(
        "{:.0}% key-rate loss: Monte Carlo {}, analytic envelope {}",
        100.0 * fraction,
        fmt_opt(mc),
        fmt_opt(analytic)
    );
    let summary = json!({
        "threshold_fraction": fraction,
        "threshold_monte_carlo": mc,
        "threshold_analytic": analytic,
        "c_drop_at_1_rad_per_s": drop_at_one,
    });
    let summary_path = dir.join("sweep_summary.json");
    write_json(&summary_path, &summary)?;
    let toml = cfg.to_toml_string();
    let mut m = Manifest::new("sweep", &toml, Some(seed));
    m.outputs = vec![FileEntry::output(&path)?, FileEntry::output(&summary_path)?];
    m.summary = Some(summary);
    let mpath = m.save(dir, &toml)?;
    println!(
        "wrote {}, {}, {}",
        path.display(),
        summary_path.display(),
        mpath.display()
    );
    Ok(())
}

/// Estimate file contents; every field may be missing.
#[derive(Debug, Default, Deserialize)]
struct PartialEstimate {
    q_z: Option<f64>,
    c64: Option<f64>,
    n_total: Option<u64>,
    n_keymap: Option<u64>,
    m_xx: Option<u64>,
    m_yx: Option<u64>,
    phase: Option<f64>,
}

fn build_estimate(args: &KeyrateArgs) -> Result<ChannelEstimate> {
    let mut p = match &args.estimate {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<PartialEstimate>(&text)
                .map_err(|e| data(format!("{}: not an estimate: {e}", path.display())))?
        }
        None => PartialEstimate::default(),
    };
    p.q_z = args.qber.or(p.q_z);
    p.c64 = args.c64.or(p.c64);
    p.n_total = args.n_total.or(p.n_total);
    p.n_keymap = args.n_keymap.or(p.n_keymap);
    p.m_xx = args.m_xx.or(p.m_xx);
    p.m_yx = args.m_yx.or(p.m_yx);
    p.phase = args.phase.or(p.phase);
    let missing: Vec<&str> = [
        ("n_total (--n-total)", p.n_total.is_none()),
        ("q_z (--qber)", p.q_z.is_none()),
        ("c64 (--c64)", p.c64.is_none()),
    ]
    .into_iter()
    .filter_map(|(name, absent)| absent.then_some(name))
    .collect();
    if !missing.is_empty() {
        let msg = format!("incomplete estimate, missing: {}", missing.join(", "));
        return Err(if args.estimate.is_some() { data(msg) } else { usage(msg) });
    }
    let mut est = ChannelEstimate::from_totals(p.n_total.unwrap(), p.q_z.unwrap(), p.c64.unwrap());
    est.n_keymap = p.n_keymap.unwrap_or(est.n_keymap);
    est.m_xx = p.m_xx.unwrap_or(est.m_xx);
    est.m_yx = p.m_yx.unwrap_or(est.m_yx);
    est.phase = p.phase;
    est.validate()?;
    Ok(est)
}

fn keyrate(cfg: &RunConfig, args: &KeyrateArgs) -> Result<u8> {
    let est = build_estimate(args)?;
    let mut sp = cfg.security;
    if let Some(f) = args.f {
        sp = sp.with_f(f);
    }
    sp.validate()?;
    let result = finite_key(&est, &sp)?;
    let readings = calibration_report(&est, &sp)?;
    if args.json {
        let out = json!({
            "estimate": est,
            "security": sp,
            "finite_key": result,
            "readings": readings,
            "reference_numerical_rate": REFERENCE_NUMERICAL_RATE,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        print_key_report(&est, &result, &readings, sp.f);
    }
    Ok(if result.is_zero() { 4 } else { 0 })
}

fn print_key_report(est: &ChannelEstimate, r: &KeyResult, readings: &[KeyResult], f: f64) {
    let a = &r.adjustment;
    println!(
        "estimate: N = {}, n = {}, m_xx = {}, m_yx = {}, Q = {:.5}, C = {:.5}",
        est.n_total, est.n_keymap, est.m_xx, est.m_yx, est.q_z, est.c64
    );
    println!(
        "asymptotic: {:.5} bits/coincidence (reference numerical value {REFERENCE_NUMERICAL_RATE})",
        r.asymptotic_rate
    );
    println!(
        "finite-size: Q' = {:.5} (xi {:.5}), C' = {:.5} (xi_xx {:.5}, xi_yx {:.5}, orientation {:.4} rad), f = {f}",
        a.q_prime, a.xi_q, a.c_prime, a.xi_xx, a.xi_yx, a.orientation
    );
    println!(
        "  I_E(Q', C') = {}, h(Q') = {:.5}",
        r.i_e.map_or("1 (Q' >= 1/2)".to_string(), |x| format!("{x:.5}")),
        r.h_q_prime
    );
    let t = &r.terms;
    println!("  yield (1 - n_q) n/N        {:+.6}", t.yield_term);
    for (name, v) in t.named() {
        println!("  {name:<26} {:+.6}", -v);
    }
    println!("  r_N                        {:+.6}", r.raw_rate);
    let (name, v) = t.binding_term();
    println!("  largest penalty: {name} ({v:.6})");
    println!(
        "secret key: {:.6} per coincidence, {} bits [{}]",
        r.rate, r.secret_bits, r.reading
    );
    println!("other readings of the absolute terms:");
    for k in readings.iter().filter(|k| k.reading != r.reading) {
        println!(
            "  {:<28} r_N = {:+.6} ({} bits)",
            k.reading.to_string(),
            k.raw_rate,
            k.secret_bits
        );
    }
    if r.is_zero() {
        println!("no positive secret key");
    }
}

fn calibrate_cmd(cfg: &RunConfig, inputs: &TagInputs) -> Result<()> {
    let (pa, pb) = tag_paths(cfg, inputs);
    let (ha, alice) = read_tags(&pa)?;
    let (hb, bob) = read_tags(&pb)?;
    for (h, side, p) in [(&ha, Side::Alice, &pa), (&hb, Side::Bob, &pb)] {
        if h.side.is_some_and(|s| s != side) {
            return Err(data(format!("{}: expected {side} tags", p.display())));
        }
    }
    let c = &cfg.calibration;
    let range = (c.range_lo, c.range_hi);
    let delays = collect_delays(&alice, &bob, range);
    let hist = histogram_from_delays(&delays, range, c.bin_width)?;
    let dir = out_dir(cfg)?;
    let hist_path = dir.join("delay_histogram.csv");
    let rows: Vec<Vec<String>> = hist
        .counts
        .iter()
        .enumerate()
        .map(|(k, n)| vec![num(hist.bin_center(k)), n.to_string()])
        .collect();
    write_csv(
        &hist_path,
        &[
            ("delay_ps", "bin center, Bob minus Alice, ps"),
            ("count", "all-pairs count"),
        ],
        &rows,
    )?;
    println!("wrote {} ({} delays)", hist_path.display(), delays.len());

    let cal = calibrate(&delays, range, c.bin_width, cfg.coincidence.slot_spacing)?;
    for (k, p) in cal.peaks.iter().enumerate() {
        println!(
            "slot {k}: center {:.1} ps, width {:.1} ps, area {:.0}, background {:.0}",
            p.center, p.width, p.area, p.background
        );
    }
    println!("spacing {:.2} ps, d0 {:.1} ps", cal.spacing, cal.base_delay);
    let applied = cal.apply(&cfg.coincidence);
    println!("config: [coincidence] base_delay = {}", applied.base_delay);
    let fit_path = dir.join("calibration.json");
    write_json(
        &fit_path,
        &json!({
            "base_delay": cal.base_delay,
            "spacing": cal.spacing,
            "slot_centers": cal.peaks.iter().map(|p| p.center).collect::<Vec<_>>(),
            "peaks": cal.peaks,
            "suggested_base_delay": applied.base_delay,
        }),
    )?;
    let toml = cfg.to_toml_string();
    let mut m = Manifest::new("calibrate", &toml, cfg.seed);
    m.inputs = vec![FileEntry::of(&pa)?, FileEntry::of(&pb)?];
    m.outputs = vec![FileEntry::output(&hist_path)?, FileEntry::output(&fit_path)?];
    m.save(dir, &toml)?;
    println!("wrote {}", fit_path.display());
    Ok(())
}
