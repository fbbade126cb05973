//! Command implementations behind the `stablespike` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use stablespike::checkpoint::Checkpoint;
use stablespike::config::{parse_entries, parse_override, resolve_key};
use stablespike::data::{
    load_manifest, read_events, write_events, write_manifest, EventStream, ManifestEntry, SynthDataset, SynthParams,
};
use stablespike::experiment::{repetition_seeds, run_ablation, run_config, sweep_timesteps, AblationAxis, EventData};
use stablespike::skeleton::{bit_combine, BitOp};
use stablespike::train::{evaluation_report, MetricsReport};
use stablespike::{ForwardOptions, FrameDataset, Graph, SnnModel, Tensor, TrainConfig};

/// Keys the CLI adds on top of the training config.
pub const RUN_KEYS: &[(&str, &str)] = &[
    ("data", "dir"),
    ("data", "height"),
    ("data", "width"),
    ("data", "classes"),
    ("run", "out"),
];

/// Training config plus dataset location and output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data_dir: None,
            height: 24,
            width: 24,
            classes: 4,
            out: PathBuf::from("runs/latest"),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some((_, name)) = resolve_key(RUN_KEYS, key) else {
            return Ok(self.train.set(key, value)?);
        };
        let num = |v: &str| -> Result<usize> { v.parse().with_context(|| format!("bad value `{v}` for `{key}`")) };
        match name {
            "dir" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "height" => self.height = num(value)?,
            "width" => self.width = num(value)?,
            "classes" => self.classes = num(value)?,
            "out" => self.out = PathBuf::from(value),
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Defaults, then the config file (if any), then `overrides` in order.
    pub fn resolve(config: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut rc = Self::default();
        if let Some(path) = config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for e in parse_entries(&text)? {
                rc.set(&e.key, &e.value)
                    .with_context(|| format!("{}:{}", path.display(), e.line))?;
            }
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            rc.set(&k, &v).with_context(|| format!("--set {o}"))?;
        }
        rc.train.validate()?;
        Ok(rc)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.train.to_text();
        let dir = self.data_dir.as_ref().map(|d| d.display().to_string()).unwrap_or_default();
        let _ = write!(
            out,
            "\n[data]\ndir = {dir}\nheight = {}\nwidth = {}\nclasses = {}\n\n[run]\nout = {}\n",
            self.height,
            self.width,
            self.classes,
            self.out.display()
        );
        out
    }

    /// Event streams of the configured dataset directory.
    pub fn load_events(&self) -> Result<EventData> {
        let dir = self
            .data_dir
            .as_ref()
            .context("no dataset configured: set data.dir (generate one with `stablespike gen-data --out DIR`)")?;
        let split = |name: &str| -> Result<Vec<EventStream>> {
            let manifest = dir.join(format!("{name}.txt"));
            ensure!(
                manifest.is_file(),
                "dataset manifest {} not found (generate one with `stablespike gen-data --out {}`)",
                manifest.display(),
                dir.display()
            );
            load_manifest(&manifest)?
                .into_iter()
                .map(|e| read_events(&e.path, e.label).map_err(Into::into))
                .collect()
        };
        Ok(EventData {
            train: split("train")?,
            test: split("test")?,
            height: self.height,
            width: self.width,
            classes: self.classes,
        })
    }
}

fn echo(rc: &RunConfig) {
    eprintln!("# resolved config\n{}", rc.to_text());
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Train once into `rc.out`; returns the report.
pub fn cmd_train(rc: &RunConfig) -> Result<MetricsReport> {
    echo(rc);
    let data = rc.load_events()?;
    let (train, test) = data.frames(rc.train.timesteps)?;
    let out = run_config(&rc.train, &train, &test, Some(&rc.out))?;
    write_file(&rc.out.join("config.txt"), &rc.to_text())?;
    Ok(out.report)
}

fn load_checked(rc: &RunConfig, checkpoint: &Path) -> Result<SnnModel> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.arch != rc.train.arch {
        return Err(stablespike::Error::ArchMismatch {
            expected: rc.train.arch.to_string(),
            found: ck.arch.to_string(),
        }
        .into());
    }
    let mut model = ck.model()?;
    model.lif = rc.train.lif();
    Ok(model)
}

fn test_frames(rc: &RunConfig) -> Result<FrameDataset> {
    let data = rc.load_events()?;
    Ok(FrameDataset::from_streams(&data.test, rc.train.timesteps, rc.height, rc.width, rc.classes)?)
}

/// Evaluate a checkpoint on the configured test split.
pub fn cmd_eval(rc: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    echo(rc);
    let model = load_checked(rc, checkpoint)?;
    Ok(evaluation_report(&model, &test_frames(rc)?, &rc.train)?)
}

/// Firing/energy/variance report, plus PGM dumps of the first `dump_samples`
/// test samples when `dump_dir` is given.
pub fn cmd_inspect(
    rc: &RunConfig,
    checkpoint: &Path,
    dump_dir: Option<&Path>,
    dump_samples: usize,
) -> Result<MetricsReport> {
    echo(rc);
    let model = load_checked(rc, checkpoint)?;
    let test = test_frames(rc)?;
    let report = evaluation_report(&model, &test, &rc.train)?;
    if let Some(dir) = dump_dir {
        let n = dump_samples.min(test.len());
        let idx: Vec<usize> = (0..n).collect();
        dump_maps(&model, &test, &idx, dir)?;
    }
    Ok(report)
}

/// Channel-average one sample's `[C, H, W]` (or `[N]`) map into a
/// `(width, height, pixels)` grayscale image in `[0, 1]`.
pub fn channel_average(map: &Tensor, sample: usize) -> (usize, usize, Vec<f64>) {
    let s = map.shape();
    let per = map.len() / s[0];
    let d = &map.data()[sample * per..(sample + 1) * per];
    if s.len() == 4 {
        let (c, h, w) = (s[1], s[2], s[3]);
        let px = (0..h * w)
            .map(|i| (0..c).map(|ch| d[ch * h * w + i]).sum::<f64>() / c as f64)
            .collect();
        (w, h, px)
    } else {
        (per, 1, d.to_vec())
    }
}

/// Plain (ASCII) PGM with 8-bit levels `round(255·v)`.
pub fn pgm(width: usize, height: usize, pixels: &[f64]) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parse a plain PGM back into 8-bit levels.
pub fn read_pgm(text: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut it = text.split_whitespace();
    ensure!(it.next() == Some("P2"), "not a plain PGM");
    let mut num = || -> Result<usize> { Ok(it.next().context("truncated PGM")?.parse()?) };
    let (w, h, max) = (num()?, num()?, num()?);
    ensure!(max == 255, "unexpected PGM max {max}");
    let px = (0..w * h).map(|_| num().map(|v| v as u8)).collect::<Result<_>>()?;
    Ok((w, h, px))
}

/// Write `sample{i}_t{t}_map.pgm` for each timestep and
/// `sample{i}_t{t}_skeleton.pgm` for each AND of steps `t`, `t+1`.
pub fn dump_maps(model: &SnnModel, data: &FrameDataset, indices: &[usize], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (inputs, _) = data.batch(indices);
    let mut g = Graph::new();
    let params = model.register(&mut g, false);
    let rec = model.forward(&mut g, &params, &inputs, ForwardOptions::default())?;
    let maps: Vec<Tensor> = rec.backbone.iter().map(|&v| g.value(v).clone()).collect();
    let skeleton = if maps.len() >= 2 { bit_combine(&maps, BitOp::And)? } else { Vec::new() };
    for (b, &i) in indices.iter().enumerate() {
        for (kind, list) in [("map", &maps), ("skeleton", &skeleton)] {
            for (t, m) in list.iter().enumerate() {
                let (w, h, px) = channel_average(m, b);
                write_file(&dir.join(format!("sample{i}_t{t}_{kind}.pgm")), &pgm(w, h, &px))?;
            }
        }
    }
    Ok(())
}

fn table_line(label: &str, mean_acc: f64, mean_var: f64, accs: &[f64]) -> String {
    let per: Vec<String> = accs.iter().map(|a| format!("{a:.1}")).collect();
    format!("{label:<14} {mean_acc:>8.2} {mean_var:>10.5}   [{}]", per.join(", "))
}

/// Run one ablation axis; prints a table and returns JSON lines (baseline first).
pub fn cmd_ablate(rc: &RunConfig, axis: AblationAxis, seeds: &[u64]) -> Result<Vec<String>> {
    echo(rc);
    let data = rc.load_events()?;
    let (train, test) = data.frames(rc.train.timesteps)?;
    let table = run_ablation(axis, &rc.train, seeds, &train, &test)?;
    println!("# ablation over {axis}, seeds {seeds:?}");
    println!("{:<14} {:>8} {:>10}   per-seed accuracy", "variant", "acc(%)", "variance");
    let mut lines = Vec::new();
    for row in std::iter::once(&table.baseline).chain(&table.rows) {
        println!("{}", table_line(&row.label, row.mean_accuracy, row.mean_variance, &row.accuracies));
        lines.push(serde_json::to_string(row)?);
    }
    write_file(&rc.out.join(format!("ablation_{axis}.jsonl")), &(lines.join("\n") + "\n"))?;
    write_file(&rc.out.join("config.txt"), &rc.to_text())?;
    Ok(lines)
}

/// Paired baseline/method trainings per `T`; prints the table and returns JSON lines.
pub fn cmd_sweep_t(rc: &RunConfig, ts: &[usize], repeats: usize) -> Result<Vec<String>> {
    echo(rc);
    let data = rc.load_events()?;
    let seeds = repetition_seeds(rc.train.seed, repeats);
    println!("# T sweep, seeds {seeds:?}");
    let rows = sweep_timesteps(&rc.train, ts, repeats, &data)?;
    println!("{:>4} {:>10} {:>10} {:>8}", "T", "baseline", "method", "delta");
    let mut lines = Vec::new();
    for r in &rows {
        println!(
            "{:>4} {:>10.2} {:>10.2} {:>+8.2}",
            r.timesteps, r.baseline.mean_accuracy, r.method.mean_accuracy, r.delta
        );
        lines.push(serde_json::to_string(r)?);
    }
    write_file(&rc.out.join("sweep_t.jsonl"), &(lines.join("\n") + "\n"))?;
    write_file(&rc.out.join("config.txt"), &rc.to_text())?;
    Ok(lines)
}

/// Apply one `key=value` override to synthetic-data parameters.
pub fn set_synth(p: &mut SynthParams, key: &str, value: &str) -> Result<()> {
    fn range(v: &str) -> Result<(u16, u16)> {
        let (a, b) = v.split_once("..").context("expected a range `lo..hi`")?;
        Ok((a.trim().parse()?, b.trim().parse()?))
    }
    let r = (|| -> Result<()> {
        match key {
            "width" => p.width = value.parse()?,
            "height" => p.height = value.parse()?,
            "train_count" => p.train_count = value.parse()?,
            "test_count" => p.test_count = value.parse()?,
            "duration_us" => p.duration_us = value.parse()?,
            "thickness" => p.thickness = range(value)?,
            "length" => p.length = range(value)?,
            "travel" => p.travel = range(value)?,
            "burst" => p.burst = value.parse()?,
            "emit_prob" => p.emit_prob = value.parse()?,
            "noise_rate" => p.noise_rate = value.parse()?,
            _ => bail!("unknown synthetic-data key `{key}`"),
        }
        Ok(())
    })();
    r.with_context(|| format!("{key}={value}"))
}

pub fn synth_text(p: &SynthParams, seed: u64) -> String {
    format!(
        "seed = {seed}\nwidth = {}\nheight = {}\ntrain_count = {}\ntest_count = {}\nduration_us = {}\nthickness = {}..{}\nlength = {}..{}\ntravel = {}..{}\nburst = {}\nemit_prob = {}\nnoise_rate = {}\n",
        p.width,
        p.height,
        p.train_count,
        p.test_count,
        p.duration_us,
        p.thickness.0,
        p.thickness.1,
        p.length.0,
        p.length.1,
        p.travel.0,
        p.travel.1,
        p.burst,
        p.emit_prob,
        p.noise_rate
    )
}

/// Write `train/`, `test/` event files, their manifests and `synth.txt`.
pub fn cmd_gen_data(out: &Path, seed: u64, params: &SynthParams) -> Result<()> {
    eprintln!("# synthetic data parameters\n{}", synth_text(params, seed));
    let ds = SynthDataset::generate(seed, params)?;
    for (name, streams) in [("train", &ds.train), ("test", &ds.test)] {
        let dir = out.join(name);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut entries = Vec::with_capacity(streams.len());
        for (i, s) in streams.iter().enumerate() {
            let rel = PathBuf::from(name).join(format!("{i:05}.ssev"));
            write_events(&out.join(&rel), s)?;
            entries.push(ManifestEntry { path: rel, label: s.label });
        }
        write_manifest(&out.join(format!("{name}.txt")), &entries)?;
    }
    write_file(&out.join("synth.txt"), &synth_text(params, seed))
}

/// Parse a comma-separated list such as `0,1,2`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(|x| x.trim().parse::<T>().with_context(|| format!("bad list item `{x}`")))
        .collect()
}
