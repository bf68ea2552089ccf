use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use coded_exposure::encoder::{encode, normalize, write_coded, write_coded_pgm, CodedImage};
use coded_exposure::energy::{edge_energy, report_csv_rows, summary, sweep, EnergyConfig, REPORT_CSV_HEADER};
use coded_exposure::hwsim::{charge_quantize_clip, ce_control_energy, run_capture, ChargeCaps, HwConfig};
use coded_exposure::ingest::{
    load_frame_sequence, preprocess, window_clips, write_frame_sequence, LoadOptions, PreprocessConfig, VideoClip,
};
use coded_exposure::optimizer::{evaluate_pattern, train_pattern, LossConfig, TrainConfig};
use coded_exposure::patterns::{expand, load_pattern, save_pattern, PatternKind, TilePattern};
use coded_exposure::rng::derive_seed;
use coded_exposure::stats::{
    collect_tiles, contrast_encode, contrast_encode_per_sample, decorrelation_loss, fit_tile_means, pearson,
    ContrastMode, CorrelationMatrix,
};
use coded_exposure::synthetic::{synthetic_corpus, CorpusConfig};
use coded_exposure::{Error, Result};

use crate::provenance::Provenance;
use crate::{
    Cli, ClipSource, Command, EncodeArgs, EnergyArgs, GenPatternArgs, HwsimArgs, IngestArgs, KindArg, StatsArgs,
    TrainArgs, VerifyArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let prov = Provenance::new(cli.seed, &format!("{:?}", cli.command));
    match &cli.command {
        Command::Ingest(a) => ingest(a, &prov),
        Command::GenPattern(a) => gen_pattern(a, cli.seed),
        Command::TrainPattern(a) => train(a, cli.seed, &prov),
        Command::Encode(a) => encode_cmd(a, cli.seed, &prov),
        Command::Stats(a) => stats(a, cli.seed, &prov),
        Command::Energy(a) => energy(a, &prov),
        Command::Hwsim(a) => hwsim(a, cli.seed, &prov),
        Command::Verify(a) => verify(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn ingest(a: &IngestArgs, prov: &Provenance) -> Result<()> {
    let cfg = PreprocessConfig {
        short_side: a.short_side,
        crop: a.crop,
    };
    if cfg.short_side == 0 || cfg.crop == 0 || cfg.crop > cfg.short_side {
        return Err(Error::InvalidParameter(format!(
            "need 0 < crop <= short side, got crop {} and short side {}",
            cfg.crop, cfg.short_side
        )));
    }
    let opts = LoadOptions {
        format: a.format,
        linearize: !a.no_linearize,
    };
    let clip = load_frame_sequence(&a.input, opts)?;
    let out = preprocess(&clip, cfg)?;
    let paths = write_frame_sequence(&out, &a.output, a.bits)?;
    let mut manifest = prov.csv_header();
    manifest.push_str("index,file,height,width,mean\n");
    for (k, (path, frame)) in paths.iter().zip(out.frames()).enumerate() {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(manifest, "{k},{name},{},{},{}", frame.height(), frame.width(), frame.mean());
    }
    write_file(&a.output.join("manifest.csv"), manifest)?;
    println!(
        "ingested {} frames {}x{} -> {}x{} into {}",
        out.slots(),
        clip.height(),
        clip.width(),
        out.height(),
        out.width(),
        a.output.display()
    );
    Ok(())
}

fn gen_pattern(a: &GenPatternArgs, seed: u64) -> Result<()> {
    let kind = match a.kind {
        KindArg::Long => PatternKind::Long,
        KindArg::Short => PatternKind::Short {
            period: a.period,
            offset: a.offset,
        },
        KindArg::Random => PatternKind::Random { p: a.p },
        KindArg::SparseRandom => PatternKind::SparseRandom,
    };
    let pattern = kind.generate(a.slots, a.tile, seed)?;
    save_pattern(&pattern, &a.output)?;
    println!(
        "{} pattern T={} M={} seed={seed}: {} of {} bits set -> {}",
        kind.name(),
        a.slots,
        a.tile,
        pattern.ones(),
        pattern.bits().len(),
        a.output.display()
    );
    Ok(())
}

/// Clips from the source; `slots` is the window length.
fn load_clips(src: &ClipSource, slots: usize, seed: u64) -> Result<Vec<VideoClip>> {
    if slots == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    if let Some(n) = src.synthetic {
        if n == 0 || src.height == 0 || src.width == 0 {
            return Err(Error::InvalidParameter("synthetic corpus needs clips, height and width >= 1".into()));
        }
        return synthetic_corpus(&CorpusConfig {
            clips: n,
            slots,
            height: src.height,
            width: src.width,
            seed: derive_seed(seed, "corpus"),
            ..CorpusConfig::default()
        });
    }
    if src.input.is_empty() {
        return Err(Error::InvalidParameter("give --input or --synthetic".into()));
    }
    let stride = src.stride.unwrap_or(slots);
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let opts = LoadOptions {
        format: src.format,
        linearize: src.linearize,
    };
    let mut clips = Vec::new();
    for path in &src.input {
        let seq = load_frame_sequence(path, opts)?;
        let windows = window_clips(seq.frames(), slots, stride)?;
        if windows.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{} has {} frames, fewer than T={slots}",
                path.display(),
                seq.slots()
            )));
        }
        clips.extend(windows);
    }
    Ok(clips)
}

fn pick_clip(src: &ClipSource, slots: usize, index: usize, seed: u64) -> Result<VideoClip> {
    let mut clips = load_clips(src, slots, seed)?;
    if index >= clips.len() {
        return Err(Error::InvalidParameter(format!(
            "clip {index} requested, source has {}",
            clips.len()
        )));
    }
    Ok(clips.swap_remove(index))
}

fn train(a: &TrainArgs, seed: u64, prov: &Provenance) -> Result<()> {
    let cfg = TrainConfig {
        tile: a.tile,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: derive_seed(seed, "train"),
        loss: LossConfig {
            contrast: a.contrast,
            normalize: !a.no_normalize,
        },
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let clips = load_clips(&a.source, a.slots, seed)?;
    let report = train_pattern(&clips, &cfg)?;
    save_pattern(&report.pattern.clone().with_seed(Some(seed)), &a.output)?;
    if let Some(path) = &a.history {
        let mut csv = prov.csv_header();
        csv.push_str("record,index,l_cor,best_so_far\n");
        for (k, l) in report.step_losses.iter().enumerate() {
            let _ = writeln!(csv, "step,{k},{l},");
        }
        for e in &report.epochs {
            let _ = writeln!(csv, "epoch,{},{},{}", e.epoch, e.l_cor, e.best_so_far);
        }
        write_file(path, csv)?;
    }
    for e in &report.epochs {
        println!("epoch {} l_cor={:.6} best={:.6}", e.epoch, e.l_cor, e.best_so_far);
    }
    println!(
        "trained on {} clips: l_cor={:.6} skipped_batches={} exposure_histogram={:?} -> {}",
        clips.len(),
        report.final_l_cor,
        report.skipped_batches,
        report.exposure_histogram,
        a.output.display()
    );
    Ok(())
}

fn encode_cmd(a: &EncodeArgs, seed: u64, prov: &Provenance) -> Result<()> {
    let pattern = load_pattern(&a.pattern)?;
    let clip = pick_clip(&a.source, pattern.slots(), a.clip, seed)?;
    let mask = expand(&pattern, clip.height(), clip.width())?;
    let raw = encode(&clip, &mask)?;
    let coded = if a.normalize { normalize(&raw)? } else { raw };
    write_coded(&coded, &a.output)?;
    if let Some(pgm) = &a.pgm {
        write_coded_pgm(&coded, pattern.slots(), pgm)?;
    }
    println!(
        "encoded {}x{}x{} -> {} (normalized={}, zero-count pixels={}) seed={} config={}",
        clip.slots(),
        clip.height(),
        clip.width(),
        a.output.display(),
        coded.is_normalized(),
        coded.zero_count_positions(),
        prov.seed,
        prov.config_hash
    );
    Ok(())
}

fn correlation_csv(prov: &Provenance, c: &CorrelationMatrix, l_cor: f64, samples: usize) -> String {
    let mut out = prov.csv_header();
    let _ = writeln!(out, "# l_cor={l_cor} samples={samples}");
    out.push_str("pixel");
    for j in 0..c.size() {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for i in 0..c.size() {
        let _ = write!(out, "p{i}");
        for v in c.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn stats(a: &StatsArgs, seed: u64, prov: &Provenance) -> Result<()> {
    let (correlation, l_cor, samples) = if !a.coded.is_empty() {
        let tile = a.tile.ok_or_else(|| Error::InvalidParameter("--coded needs --M".into()))?;
        if tile == 0 {
            return Err(Error::InvalidParameter("M must be at least 1".into()));
        }
        let batch: Vec<CodedImage> = a
            .coded
            .iter()
            .map(|p| coded_exposure::encoder::read_coded(p))
            .collect::<Result<_>>()?;
        let raw = collect_tiles(&batch, tile)?;
        let sample = match a.contrast {
            ContrastMode::Dataset => contrast_encode(&raw, &fit_tile_means(&raw)?)?,
            ContrastMode::PerSample => contrast_encode_per_sample(&raw),
        };
        let c = pearson(&sample)?;
        let l = decorrelation_loss(&c)?;
        (c, l, sample.samples())
    } else {
        let path = a
            .pattern
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("give --coded files or --pattern with a clip source".into()))?;
        let pattern: TilePattern = load_pattern(path)?;
        if a.tile.is_some_and(|m| m != pattern.tile()) {
            return Err(Error::InvalidParameter(format!("--M disagrees with the pattern's M={}", pattern.tile())));
        }
        let clips = load_clips(&a.source, pattern.slots(), seed)?;
        let cfg = LossConfig {
            contrast: a.contrast,
            normalize: !a.no_normalize,
        };
        let eval = evaluate_pattern(&pattern, &clips, &cfg)?;
        let per_clip = (clips[0].height() / pattern.tile()) * (clips[0].width() / pattern.tile());
        (eval.correlation, eval.l_cor, clips.len() * per_clip)
    };
    if let Some(path) = &a.output {
        write_file(path, correlation_csv(prov, &correlation, l_cor, samples))?;
    }
    println!(
        "l_cor={l_cor:.6} mean_abs_corr={:.6} pixels={} samples={samples}",
        correlation.mean_abs_off_diagonal(),
        correlation.size()
    );
    Ok(())
}

fn energy(a: &EnergyArgs, prov: &Provenance) -> Result<()> {
    let cfg = EnergyConfig {
        e_sense: a.e_sense,
        adc_mipi_fraction: a.adc_mipi_fraction,
        e_ce: a.e_ce,
        e_wifi: a.e_wifi,
        e_lora: a.e_lora,
        slots: a.slots,
        bits_per_pixel: a.bits,
        coded_bits_per_pixel: a.coded_bits,
        ce_per_readout: a.ce_per_readout,
    };
    cfg.validate()?;
    let mut csv = prov.csv_header();
    csv.push_str(REPORT_CSV_HEADER);
    csv.push('\n');
    if let Some(param) = a.sweep {
        for link in a.link.links() {
            for row in sweep(&cfg, param, &a.values, link)? {
                println!(
                    "{}={} link={} saving={:.4}x",
                    param.name(),
                    row.value,
                    link.name(),
                    row.report.savings_ratio
                );
                csv.push_str(&report_csv_rows(param.name(), row.value, &row.report));
            }
        }
    } else {
        print!("{}", summary(&cfg)?);
        for link in a.link.links() {
            csv.push_str(&report_csv_rows("default", 0.0, &edge_energy(&cfg, link)?));
        }
    }
    if let Some(path) = &a.output {
        write_file(path, csv)?;
    }
    Ok(())
}

fn hwsim(a: &HwsimArgs, seed: u64, prov: &Provenance) -> Result<()> {
    if !(a.clock_hz > 0.0 && a.clock_hz.is_finite()) {
        return Err(Error::InvalidParameter(format!("clock {} Hz is not positive", a.clock_hz)));
    }
    let pattern = load_pattern(&a.pattern)?;
    let clip = charge_quantize_clip(&pick_clip(&a.source, pattern.slots(), a.clip, seed)?)?;
    let cfg = HwConfig {
        clock_hz: a.clock_hz,
        caps: ChargeCaps {
            pd_full_well: a.pd_full_well,
            fd_capacity: a.fd_capacity,
        },
    };
    let capture = run_capture(&clip, &pattern, &cfg)?;
    let fd = capture.to_coded_image()?;
    let reference = encode(&clip, &expand(&pattern, clip.height(), clip.width())?)?;
    let matches = fd == reference;
    let ce = ce_control_energy(&capture.traces, a.e_ce, clip.height() * clip.width());
    if let Some(path) = &a.trace {
        let doc = serde_json::json!({
            "provenance": prov.json(),
            "height": capture.height,
            "width": capture.width,
            "timing": capture.timing,
            "ce_control_energy_pj": ce,
            "matches_encoder": matches,
            "slots": capture.traces,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Validation(e.to_string()))?;
        write_file(path, text + "\n")?;
    }
    if let Some(path) = &a.output {
        write_coded(&fd, path)?;
    }
    let t = capture.timing;
    println!(
        "captured {}x{}x{}: {} cycles/slot, {} cycles, {:.3} us at {} Hz, ce_energy={ce} pJ, matches_encoder={matches}",
        clip.slots(),
        clip.height(),
        clip.width(),
        t.cycles_per_slot,
        t.total_cycles,
        t.duration_us,
        t.clock_hz
    );
    Ok(())
}

/// Built-in fixtures: every baseline pattern, both tile sizes and the
/// degenerate all-off / all-on cases, on seeded synthetic clips.
fn verify(a: &VerifyArgs) -> Result<()> {
    let mut fixtures: Vec<(String, TilePattern, CorpusConfig)> = Vec::new();
    for (slots, tile, h, w) in [(16, 8, 32, 32), (8, 2, 6, 10), (5, 4, 12, 8), (1, 1, 3, 3)] {
        let corpus = CorpusConfig {
            clips: 1,
            slots,
            height: h,
            width: w,
            seed: 17,
            max_blobs: 3,
        };
        let kinds = [
            PatternKind::Long,
            PatternKind::Short {
                period: (slots / 2).max(1),
                offset: 0,
            },
            PatternKind::Random { p: 0.5 },
            PatternKind::SparseRandom,
        ];
        for kind in kinds {
            fixtures.push((
                format!("{} T={slots} M={tile} {h}x{w}", kind.name()),
                kind.generate(slots, tile, 3)?,
                corpus,
            ));
        }
        fixtures.push((
            format!("all-off T={slots} M={tile} {h}x{w}"),
            TilePattern::new(slots, tile, vec![0; slots * tile * tile])?,
            corpus,
        ));
    }
    let mut failures = 0;
    for (name, pattern, corpus) in &fixtures {
        let clip = charge_quantize_clip(&synthetic_corpus(corpus)?.remove(0))?;
        let capture = run_capture(&clip, pattern, &HwConfig::default())?;
        let ok = capture.to_coded_image()? == encode(&clip, &expand(pattern, clip.height(), clip.width())?)?;
        failures += !ok as usize;
        if !a.quiet || !ok {
            println!("{} {name}", if ok { "ok  " } else { "FAIL" });
        }
    }
    if failures > 0 {
        return Err(Error::Validation(format!(
            "{failures} of {} fixtures differ between the encoder and the pixel-array simulation",
            fixtures.len()
        )));
    }
    println!("verified {} fixtures: pixel-array FD readout equals the encoder bit for bit", fixtures.len());
    Ok(())
}
