use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gazetteer::config::ConfigLayers;
use gazetteer::pipeline::{Pipeline, RunSummary, Stage, StageError};
use gazetteer::Execution;

#[derive(Parser, Debug)]
#[command(name = "gazetteer", version, about = "Build a geocoded gazetteer from encyclopedia OCR pages")]
struct Cli {
    /// Flat TOML file with pipeline settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Maximum concurrent requests to remote services.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment raw pages into the dataset.
    Ingest {
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        /// Page file layout, e.g. "{volume}/{page}.txt".
        #[arg(long)]
        pattern: Option<String>,
        /// Dataset to write.
        #[arg(long, visible_alias = "dataset")]
        out: Option<PathBuf>,
    },
    /// Fit the location classifier on annotated entries.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, visible_alias = "model")]
        model_out: Option<PathBuf>,
    },
    /// Label every entry as location or not.
    Classify {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Rewrite the dataset with the labels (the default).
        #[arg(long)]
        in_place: bool,
    },
    /// Link location entries to Wikidata items.
    Link {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Used to label entries that have not been classified yet.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cache_mode: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Leave entries unlinked when the best similarity is below this.
        #[arg(long, allow_negative_numbers = true)]
        min_sim: Option<f64>,
    },
    /// Fetch coordinates for linked entries.
    Coords {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        cache_mode: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Write GeoJSON, the distance histogram and the SVG map.
    Report {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        geojson: Option<PathBuf>,
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        ref_lat: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        ref_lon: Option<f64>,
        #[arg(long)]
        bucket_km: Option<f64>,
    },
    /// Run every stage, training first if no model exists.
    Run {
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cache_mode: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        geojson: Option<PathBuf>,
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Default)]
struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn opt(&mut self, key: &'static str, value: Option<impl Display>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
        self
    }

    fn path(&mut self, key: &'static str, value: Option<PathBuf>) -> &mut Self {
        self.opt(key, value.map(|p| p.display().to_string()))
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let mut o = Overrides::default();
    o.opt("concurrency", cli.concurrency);
    match &cli.command {
        Command::Ingest { raw_dir, pattern, out } => {
            o.path("raw_dir", raw_dir.clone()).opt("page_pattern", pattern.as_ref()).path("dataset", out.clone());
        }
        Command::Train { dataset, annotations, model_out } => {
            o.path("dataset", dataset.clone()).path("annotations", annotations.clone()).path("model", model_out.clone());
        }
        Command::Classify { dataset, model, in_place: _ } => {
            o.path("dataset", dataset.clone()).path("model", model.clone());
        }
        Command::Link { dataset, model, cache_mode, cache_dir, min_sim } => {
            o.path("dataset", dataset.clone())
                .path("model", model.clone())
                .opt("cache_mode", cache_mode.as_ref())
                .path("cache_dir", cache_dir.clone())
                .opt("min_sim", *min_sim);
        }
        Command::Coords { dataset, cache_mode, cache_dir } => {
            o.path("dataset", dataset.clone()).opt("cache_mode", cache_mode.as_ref()).path("cache_dir", cache_dir.clone());
        }
        Command::Report { dataset, geojson, histogram, svg, ref_lat, ref_lon, bucket_km } => {
            o.path("dataset", dataset.clone())
                .path("geojson", geojson.clone())
                .path("histogram", histogram.clone())
                .path("svg", svg.clone())
                .opt("ref_lat", *ref_lat)
                .opt("ref_lon", *ref_lon)
                .opt("bucket_km", *bucket_km);
        }
        Command::Run { raw_dir, dataset, annotations, model, cache_mode, cache_dir, geojson, histogram, svg } => {
            o.path("raw_dir", raw_dir.clone())
                .path("dataset", dataset.clone())
                .path("annotations", annotations.clone())
                .path("model", model.clone())
                .opt("cache_mode", cache_mode.as_ref())
                .path("cache_dir", cache_dir.clone())
                .path("geojson", geojson.clone())
                .path("histogram", histogram.clone())
                .path("svg", svg.clone());
        }
    }
    o
}

fn build_pipeline(cli: &Cli) -> Result<Pipeline, StageError> {
    let config_err = |e: &dyn Display| StageError::new(Stage::Config, e.to_string());
    let mut layers = ConfigLayers::new();
    if let Some(path) = &cli.config {
        layers.load_file(path).map_err(|e| config_err(&e))?;
    }
    layers.apply_env(std::env::vars());
    for (key, value) in overrides(cli).0 {
        layers.set(key, value).map_err(|e| config_err(&e))?;
    }
    let config = layers.build().map_err(|e| config_err(&e))?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    Ok(Pipeline::from_config(config)?.execution(exec))
}

fn print_summaries(summaries: &[RunSummary]) {
    for s in summaries {
        println!("{}", serde_json::to_string(s).expect("summary serializes"));
    }
    if summaries.is_empty() {
        return;
    }
    eprintln!("{:<9} {:>8} {:>8} {:>7} {:>9} {:>9}  ratios", "stage", "input", "output", "errors", "warnings", "time_ms");
    for s in summaries {
        let ratios: Vec<String> = s.ratios.iter().map(|(k, v)| format!("{k}={v:.3}")).collect();
        eprintln!(
            "{:<9} {:>8} {:>8} {:>7} {:>9} {:>9}  {}",
            s.stage.name(),
            s.input_count,
            s.output_count,
            s.error_count,
            s.warning_count,
            s.wall_time_ms,
            ratios.join(" ")
        );
    }
}

fn report_error(e: &StageError) -> ExitCode {
    eprintln!("error: {e}");
    for id in &e.entry_ids {
        eprintln!("entry_id: {id}");
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors count as configuration errors
            return if e.use_stderr() { ExitCode::from(Stage::Config.exit_code() as u8) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("GAZETTEER_LOG").init();

    let pipeline = match build_pipeline(&cli) {
        Ok(p) => p,
        Err(e) => return report_error(&e),
    };
    let result = match &cli.command {
        Command::Ingest { .. } => pipeline.ingest().map(|s| vec![s]).map_err(|e| (Vec::new(), e)),
        Command::Train { .. } => pipeline.train().map(|s| vec![s]).map_err(|e| (Vec::new(), e)),
        Command::Classify { .. } => pipeline.classify().map(|s| vec![s]).map_err(|e| (Vec::new(), e)),
        Command::Link { .. } => pipeline.link().map(|s| vec![s]).map_err(|e| (Vec::new(), e)),
        Command::Coords { .. } => pipeline.coords().map(|s| vec![s]).map_err(|e| (Vec::new(), e)),
        Command::Report { .. } => pipeline.report().map(|s| vec![s]).map_err(|e| (Vec::new(), e)),
        Command::Run { .. } => pipeline.run(),
    };
    match result {
        Ok(summaries) => {
            print_summaries(&summaries);
            ExitCode::SUCCESS
        }
        Err((done, e)) => {
            print_summaries(&done);
            report_error(&e)
        }
    }
}
