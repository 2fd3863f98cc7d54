use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use dtd_core::io::{write_masks, write_slim, write_timeline};
use dtd_core::{
    DropMask, Engine, EngineConfig, Mode, SimilarityKind, SlimTokenStream, StepInput, StepOutput, TimelineEntry,
};
use serde::Serialize;

use crate::input::{Input, RawStep};
use crate::options::{create_output, name_flag, EngineArgs, Report};

fn check_input(input: &Input, config: &EngineConfig) -> Result<()> {
    if !input.has_pixels() && config.similarity_kind() == SimilarityKind::Pixel {
        let flag = if config.mode.is_ranked() { "--rank-by" } else { "--mode" };
        bail!(anyhow::Error::new(dtd_core::Error::Config {
            field: "mode",
            reason: format!("{} compares pixels, but {} holds embeddings", config.mode, input.label),
        })
        .context(flag));
    }
    Ok(())
}

/// Runs `input` through a fresh engine, handing every step output to `each`.
/// Video-aware selection needs the whole clip, so it collects first.
fn run(mut input: Input, config: &EngineConfig, mut each: impl FnMut(&StepOutput) -> Result<()>) -> Result<Engine> {
    check_input(&input, config)?;
    let geom = input.geom;
    let label = input.label.clone();
    let mut engine = Engine::new(geom, config.clone()).map_err(|e| name_flag(e, &label))?;
    if config.mode == Mode::VideoAware {
        let inputs = input
            .by_ref()
            .map(|raw| raw?.to_input(&geom))
            .collect::<Result<Vec<StepInput>>>()?;
        if inputs.is_empty() {
            bail!("{label}: input holds no frames");
        }
        for out in engine.run_batch(inputs).with_context(|| label.clone())? {
            each(&out)?;
        }
    } else {
        for raw in input.by_ref() {
            let out = engine.push(raw?.to_input(&geom)?).with_context(|| label.clone())?;
            each(&out)?;
        }
        if engine.timeline().is_empty() {
            bail!("{label}: input holds no frames");
        }
    }
    Ok(engine)
}

#[derive(Serialize)]
struct Summary {
    steps: usize,
    total: usize,
    retained: usize,
    drop_ratio: f64,
    min_ratio: f64,
    mean_ratio: f64,
    max_ratio: f64,
    triggers: usize,
}

impl Summary {
    fn of(timeline: &[TimelineEntry]) -> Self {
        let total: usize = timeline.iter().map(|e| e.total).sum();
        let retained: usize = timeline.iter().map(|e| e.retained).sum();
        let ratios = timeline.iter().map(|e| e.drop_ratio);
        Summary {
            steps: timeline.len(),
            total,
            retained,
            drop_ratio: (total - retained) as f64 / total as f64,
            min_ratio: ratios.clone().fold(f64::INFINITY, f64::min),
            mean_ratio: ratios.clone().sum::<f64>() / timeline.len() as f64,
            max_ratio: ratios.fold(f64::NEG_INFINITY, f64::max),
            triggers: timeline.iter().filter(|e| e.is_trigger).count(),
        }
    }

    fn print(&self, report: Report, out: &mut impl Write) -> Result<()> {
        match report {
            Report::Json => writeln!(out, "{}", serde_json::to_string(self)?)?,
            Report::Text => {
                writeln!(out, "steps          {}", self.steps)?;
                writeln!(out, "total tokens   {}", self.total)?;
                writeln!(out, "retained       {}", self.retained)?;
                writeln!(out, "drop ratio     {:.6}", self.drop_ratio)?;
                writeln!(
                    out,
                    "per-step ratio min {:.6} mean {:.6} max {:.6}",
                    self.min_ratio, self.mean_ratio, self.max_ratio
                )?;
                writeln!(out, "triggers       {}", self.triggers)?;
            }
        }
        Ok(())
    }
}

fn write_file(path: &PathBuf, f: impl FnOnce(&mut dyn Write) -> dtd_core::Result<()>) -> Result<()> {
    let mut w = create_output(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub struct DropArgs<'a> {
    pub input: &'a PathBuf,
    pub output: &'a PathBuf,
    pub masks: Option<&'a PathBuf>,
    pub timeline: Option<&'a PathBuf>,
}

pub fn drop(paths: DropArgs<'_>, args: &EngineArgs) -> Result<()> {
    let config = args.config()?;
    let input = Input::open(paths.input, args)?;
    let mut slim: Option<SlimTokenStream> = None;
    let mut masks: Vec<DropMask> = Vec::new();
    let engine = run(input, &config, |out| {
        let s = slim.get_or_insert_with(|| SlimTokenStream::empty(out.fragment.dim));
        s.extend_from(&out.fragment)?;
        masks.push(out.mask.clone());
        Ok(())
    })?;
    let slim = slim.unwrap_or_default();
    write_file(paths.output, |w| write_slim(w, &slim))?;
    if let Some(path) = paths.masks {
        write_file(path, |w| write_masks(w, &masks))?;
    }
    if let Some(path) = paths.timeline {
        write_file(path, |w| write_timeline(w, engine.timeline()))?;
    }
    Summary::of(engine.timeline()).print(args.report, &mut io::stdout().lock())
}

pub fn analyze(input: &Path, timeline: Option<&PathBuf>, curve: Option<&PathBuf>, args: &EngineArgs) -> Result<()> {
    let config = args.config()?;
    let input = Input::open(input, args)?;
    let engine = run(input, &config, |_| Ok(()))?;
    let entries = engine.timeline();
    if let Some(path) = timeline {
        write_file(path, |w| write_timeline(w, entries))?;
    }
    let curve_text: String = entries
        .iter()
        .map(|e| format!("{}\t{}\n", e.step, e.drop_ratio))
        .collect();
    if let Some(path) = curve {
        let mut w = create_output(path)?;
        w.write_all(curve_text.as_bytes())
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let mut out = io::stdout().lock();
    match args.report {
        Report::Text => {
            writeln!(out, "# step\tdrop_ratio")?;
            out.write_all(curve_text.as_bytes())?;
        }
        Report::Json => write_timeline(&mut out, entries)?,
    }
    Ok(())
}

pub fn triggers(input: &Path, args: &EngineArgs) -> Result<()> {
    let config = args.config()?;
    let input = Input::open(input, args)?;
    let engine = run(input, &config, |_| Ok(()))?;
    let mut out = io::stdout().lock();
    if args.report == Report::Text {
        writeln!(out, "# step\twall_time\tdrop_ratio")?;
    }
    for t in engine.triggers() {
        match args.report {
            Report::Text => writeln!(out, "{}\t{}\t{}", t.step, t.wall_time, t.drop_ratio)?,
            Report::Json => writeln!(out, "{}", serde_json::to_string(t)?)?,
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct StreamRecord<'a> {
    #[serde(flatten)]
    entry: &'a TimelineEntry,
    memory_tokens: usize,
    evicted: &'a [usize],
}

/// Reads RVF1 from stdin and writes one JSON record per step, flushed before
/// the next step is read.
pub fn stream(args: &EngineArgs) -> Result<()> {
    let config = args.config()?;
    if config.mode == Mode::VideoAware {
        bail!(anyhow::Error::new(dtd_core::Error::Config {
            field: "mode",
            reason: "video-aware selection needs the whole clip and cannot stream".into(),
        })
        .context("--mode"));
    }
    let stdin: Box<dyn io::Read> = Box::new(io::stdin().lock());
    let input = Input::rvf(stdin, "<stdin>".into(), args)?;
    let mut out = io::stdout().lock();
    run(input, &config, |o| {
        let record = StreamRecord {
            entry: &o.entry,
            memory_tokens: o.memory_tokens,
            evicted: &o.evicted,
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
        out.flush()?;
        Ok(())
    })?;
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    mode: String,
    run: usize,
    seconds: f64,
    steps_per_sec: f64,
    tokens_per_sec: f64,
    retained: usize,
    patchify: f64,
    similarity: f64,
    selection: f64,
    commit: f64,
}

#[derive(Serialize)]
struct BenchMedian {
    mode: String,
    repeats: usize,
    steps: usize,
    median_seconds: f64,
    steps_per_sec: f64,
    tokens_per_sec: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn bench(input: &Path, repeat: usize, modes: &[String], args: &EngineArgs) -> Result<()> {
    if repeat == 0 {
        bail!("--repeat: must be at least 1");
    }
    let base = args.config()?;
    let mut configs = vec![base.clone()];
    if !modes.is_empty() {
        configs = modes
            .iter()
            .map(|m| {
                let mode: Mode = m.parse().map_err(|e| name_flag(e, "--modes"))?;
                Ok(EngineConfig { mode, ..base.clone() })
            })
            .collect::<Result<_>>()?;
    }

    let mut source = Input::open(input, args)?;
    let geom = source.geom;
    let label = source.label.clone();
    let raw: Vec<RawStep> = source.by_ref().collect::<Result<_>>()?;
    if raw.is_empty() {
        bail!("{label}: input holds no frames");
    }
    let steps = raw.len();
    let tokens = steps * geom.tokens_per_step();

    let mut out = io::stdout().lock();
    for config in &configs {
        check_input(&source, config)?;
        if args.report == Report::Text {
            writeln!(
                out,
                "mode {}: {steps} steps of {} tokens from {label}",
                config.mode,
                geom.tokens_per_step()
            )?;
            writeln!(
                out,
                "run\tseconds\tsteps/s\ttokens/s\tretained\tpatchify\tsimilarity\tselection\tcommit"
            )?;
        }
        let mut seconds = Vec::with_capacity(repeat);
        let mut retained_first = None;
        for run in 1..=repeat {
            let started = Instant::now();
            let mut patch_time = Duration::ZERO;
            let mut inputs = Vec::with_capacity(steps);
            let mut engine = Engine::new(geom, config.clone()).map_err(|e| name_flag(e, &label))?;
            let mut retained = 0usize;
            let mut prepare = |r: &RawStep| -> Result<StepInput> {
                let t = Instant::now();
                let input = r.to_input(&geom)?;
                patch_time += t.elapsed();
                Ok(input)
            };
            if config.mode == Mode::VideoAware {
                for r in &raw {
                    inputs.push(prepare(r)?);
                }
                retained = engine.run_batch(inputs)?.iter().map(|o| o.entry.retained).sum();
            } else {
                for r in &raw {
                    retained += engine.push(prepare(r)?)?.entry.retained;
                }
            }
            let secs = started.elapsed().as_secs_f64();
            if *retained_first.get_or_insert(retained) != retained {
                bail!(
                    "run {run} retained {retained} tokens, run 1 retained {}",
                    retained_first.unwrap()
                );
            }
            seconds.push(secs);
            let t = engine.timings();
            let row = BenchRow {
                mode: config.mode.to_string(),
                run,
                seconds: secs,
                steps_per_sec: steps as f64 / secs,
                tokens_per_sec: tokens as f64 / secs,
                retained,
                patchify: patch_time.as_secs_f64(),
                similarity: t.similarity.as_secs_f64(),
                selection: t.selection.as_secs_f64(),
                commit: t.commit.as_secs_f64(),
            };
            match args.report {
                Report::Json => writeln!(out, "{}", serde_json::to_string(&row)?)?,
                Report::Text => writeln!(
                    out,
                    "{}\t{:.4}\t{:.1}\t{:.0}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                    row.run,
                    row.seconds,
                    row.steps_per_sec,
                    row.tokens_per_sec,
                    row.retained,
                    row.patchify,
                    row.similarity,
                    row.selection,
                    row.commit
                )?,
            }
        }
        let m = median(seconds);
        let summary = BenchMedian {
            mode: config.mode.to_string(),
            repeats: repeat,
            steps,
            median_seconds: m,
            steps_per_sec: steps as f64 / m,
            tokens_per_sec: tokens as f64 / m,
        };
        match args.report {
            Report::Json => writeln!(out, "{}", serde_json::to_string(&summary)?)?,
            Report::Text => writeln!(
                out,
                "median\t{:.4}\t{:.1}\t{:.0}",
                summary.median_seconds, summary.steps_per_sec, summary.tokens_per_sec
            )?,
        }
    }
    Ok(())
}
