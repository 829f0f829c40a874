mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use falnet_core::checkpoint::Checkpoint;
use falnet_core::data::{clean, format_timestamp, parse_csv, write_csv, TimeSeriesFrame};
use falnet_core::decomposition::{stl_decompose, DenoiseConfig, StlConfig};
use falnet_core::metrics::MetricsReport;
use falnet_core::model::forward_eval;
use falnet_core::pipeline::{persistence_forecast, predict_series, prepare, windows, Forecast};
use falnet_core::synth::{synth_generate, SynthSpec};
use falnet_core::tensor::Matrix;
use falnet_core::training::train;

use crate::config::{resolve, RunArgs};

#[derive(Parser)]
#[command(name = "falnet", version, about = "Decomposition + LSTM + attention PM2.5 forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic six-channel hourly CSV
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, env = "FALNET_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate gaps and replace IQR outliers
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one trend/seasonal/residual CSV per channel
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 24)]
        period: usize,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit the preprocessor and train the network
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Per-epoch history CSV
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// One-step forecasts for the test segment
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics JSON for the test segment
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Also report metrics on the normalised residual scale
        #[arg(long)]
        normalized: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time, truth and prediction as CSV for external plotting
    ExportPlot {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Mean attention weights of the last test window
        #[arg(long)]
        attention: Option<PathBuf>,
    },
}

fn read_frame(path: &Path) -> Result<TimeSeriesFrame> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_clean(path: &Path) -> Result<TimeSeriesFrame> {
    Ok(clean(&read_frame(path)?)?)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn metrics_json(original: &MetricsReport, normalized: Option<&MetricsReport>) -> String {
    match normalized {
        None => format!("{}\n", original.to_json()),
        Some(n) => format!("{{\"original\":{},\"normalized\":{}}}\n", original.to_json(), n.to_json()),
    }
}

/// Test-segment forecast from a saved session.
fn session_forecast(run: &RunArgs) -> Result<(Checkpoint, TimeSeriesFrame, Forecast)> {
    let cfg = resolve(run)?;
    let ck = Checkpoint::load(cfg.checkpoint()?).with_context(|| format!("loading {}", cfg.checkpoint().unwrap().display()))?;
    let frame = read_clean(cfg.input()?)?;
    if frame.len() <= ck.pre.n_fit {
        bail!(
            "input has {} rows but the checkpoint was fit on {}; nothing to forecast",
            frame.len(),
            ck.pre.n_fit
        );
    }
    let dataset = windows(&ck.pre, &frame, ck.config.train.window)?;
    let first = dataset.target_index.iter().position(|&t| t >= ck.pre.n_fit).unwrap_or(dataset.len());
    let test = dataset.subset(first..dataset.len());
    let model = ck.config.train.model_config(frame.n_channels());
    let forecast = predict_series(&ck.params, &model, &ck.pre, &frame, &test)?;
    Ok((ck, frame, forecast))
}

fn cmd_synth(n: usize, seed: u64, out: &Path) -> Result<()> {
    let frame = synth_generate(n, seed, &SynthSpec::default())?;
    write_out(Some(out), &write_csv(&frame))
}

fn cmd_decompose(input: &Path, period: usize, tau: f64, out_dir: &Path) -> Result<()> {
    let frame = read_clean(input)?;
    let denoise = DenoiseConfig::new(tau)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (c, name) in frame.channels.iter().enumerate() {
        let y = frame.column(c);
        let mut d = stl_decompose(&y, period, &StlConfig::default()).with_context(|| format!("channel {name}"))?;
        d.denoise(&denoise)?;
        let mut text = String::from("t,y,trend,seasonal,residual,denoised_residual\n");
        for t in 0..y.len() {
            writeln!(
                text,
                "{},{},{},{},{},{}",
                format_timestamp(frame.timestamps[t]),
                y[t],
                d.trend[t],
                d.seasonal[t],
                d.residual[t],
                d.denoised_residual[t]
            )?;
        }
        let file = out_dir.join(format!("{}.csv", name.replace(['/', '\\'], "_")));
        write_out(Some(&file), &text)?;
    }
    Ok(())
}

fn cmd_train(run: &RunArgs, history: Option<&Path>) -> Result<()> {
    let cfg = resolve(run)?;
    let frame = read_clean(cfg.input()?)?;
    let prepared = prepare(&frame, &cfg.pipeline)?;
    let outcome = train(&prepared.train_set(), &cfg.pipeline.train)?;
    let model = cfg.pipeline.train.model_config(frame.n_channels());
    let forecast = predict_series(&outcome.params, &model, &prepared.pre, &frame, &prepared.test_set())?;
    if let Some(path) = history {
        write_out(Some(path), &outcome.history.to_csv())?;
    }
    let ck = Checkpoint {
        config: cfg.pipeline.clone(),
        pre: prepared.pre,
        params: outcome.params,
        adam: outcome.adam,
    };
    ck.save(cfg.checkpoint()?)
        .with_context(|| format!("writing {}", cfg.checkpoint().unwrap().display()))?;
    eprintln!(
        "trained {} epochs ({} steps) in {:.1}s",
        outcome.history.len(),
        ck.adam.t,
        outcome.history.wall_seconds
    );
    write_out(None, &metrics_json(&forecast.metrics()?, None))
}

fn cmd_predict(run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let (ck, frame, f) = session_forecast(run)?;
    let persistence = persistence_forecast(&frame.column(ck.pre.target), &f.rows)?;
    let mut text = String::from("timestamp,truth,prediction,persistence\n");
    for i in 0..f.rows.len() {
        writeln!(
            text,
            "{},{},{},{}",
            format_timestamp(f.timestamps[i]),
            f.truth[i],
            f.prediction[i],
            persistence[i]
        )?;
    }
    write_out(out, &text)
}

fn cmd_evaluate(run: &RunArgs, normalized: bool, out: Option<&Path>) -> Result<()> {
    let (_, _, f) = session_forecast(run)?;
    let norm = if normalized { Some(f.normalized_metrics()?) } else { None };
    write_out(out, &metrics_json(&f.metrics()?, norm.as_ref()))
}

fn cmd_export_plot(run: &RunArgs, out: &Path, attention: Option<&Path>) -> Result<()> {
    let (ck, frame, f) = session_forecast(run)?;
    let mut text = String::from("timestamp,truth,prediction\n");
    for i in 0..f.rows.len() {
        writeln!(text, "{},{},{}", format_timestamp(f.timestamps[i]), f.truth[i], f.prediction[i])?;
    }
    write_out(Some(out), &text)?;
    if let Some(path) = attention {
        let features = ck.pre.features(&frame)?;
        let w = ck.config.train.window;
        let end = *f.rows.last().expect("non-empty forecast");
        let block = features.slice_rows(end - w, end);
        let window = Matrix::from_vec(w, frame.n_channels(), block.values)?;
        let model = ck.config.train.model_config(frame.n_channels());
        let (_, cache) = forward_eval(&ck.params, &model, &window)?;
        let weights = cache.attention.mean_weights();
        let mut text = String::from("query");
        for k in 0..weights.cols() {
            write!(text, ",k{k}")?;
        }
        text.push('\n');
        for q in 0..weights.rows() {
            write!(text, "{q}")?;
            for v in weights.row(q) {
                write!(text, ",{v}")?;
            }
            text.push('\n');
        }
        write_out(Some(path), &text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { n, seed, out } => cmd_synth(n, seed, &out),
        Command::Clean { input, out } => write_out(Some(&out), &write_csv(&read_clean(&input)?)),
        Command::Decompose {
            input,
            period,
            tau,
            out_dir,
        } => cmd_decompose(&input, period, tau, &out_dir),
        Command::Train { run, history } => cmd_train(&run, history.as_deref()),
        Command::Predict { run, out } => cmd_predict(&run, out.as_deref()),
        Command::Evaluate { run, normalized, out } => cmd_evaluate(&run, normalized, out.as_deref()),
        Command::ExportPlot { run, out, attention } => cmd_export_plot(&run, &out, attention.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
