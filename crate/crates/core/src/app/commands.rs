use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{AppError, ExperimentConfig, VariantName};
use crate::data::{
    extract_patches, imbalance_ratio, load_cube, load_labels, load_patches, pca_reduce, save_cube, save_labels,
    save_patches, stratified_split, stratified_split_counts, synth_cube, LabelRaster, PatchSet, SplitSpec,
};
use crate::eval::{confusion, knn_classify, mcnemar, metrics, render_map};
use crate::networks::{Discriminator, NetSpec, Z_DIM};
use crate::tensor::{read_checkpoint, write_checkpoint, ParamSet};
use crate::training::{predict, train_acgan, train_cnn, train_mfegan, TrainError, TrainTrace, Variant};

/// Spectral components kept by the preparation step.
const COMPONENTS: usize = 3;

const CUBE_FILE: &str = "cube.hsc";
const LABELS_FILE: &str = "labels.hsl";
const PATCHES_FILE: &str = "patches.hsp";
const SPLIT_FILE: &str = "split.csv";

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), AppError> {
    fs::write(path, bytes).map_err(|e| AppError::Input(format!("cannot write {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|e| AppError::Input(format!("cannot read {}: {e}", path.display())))
}

fn save_params(path: &Path, params: &ParamSet) -> Result<(), AppError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params.records())?;
    write_file(path, buf)
}

/// Reduces the cube to three normalized components, extracts patches around
/// every labeled pixel and splits them per class.
pub fn cmd_prepare(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), AppError> {
    let (cube, labels) = match (&cfg.data.cube, &cfg.data.labels, &cfg.data.synthetic) {
        (Some(c), Some(l), _) => (load_cube(cfg.resolve(c))?, load_labels(cfg.resolve(l))?),
        (_, _, Some(spec)) => synth_cube(spec)?,
        _ => return Err(AppError::Input("config key 'data': no data source".into())),
    };
    labels.check_matches(&cube)?;
    let n = labels.class_count()?;
    let (reduced, pca) = pca_reduce(&cube, COMPONENTS)?;
    let patches = extract_patches(&reduced, &labels, cfg.sp)?;
    let split = match &cfg.train_counts {
        Some(counts) => stratified_split_counts(&patches.labels, n, counts, cfg.seed),
        None => stratified_split(&patches.labels, n, cfg.train_fraction.unwrap_or_default(), cfg.seed),
    }
    .map_err(|e| AppError::Input(format!("split: {e}")))?;

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| AppError::Input(format!("cannot create {}: {e}", dir.display())))?;
    save_cube(dir.join(CUBE_FILE), &reduced)?;
    save_labels(dir.join(LABELS_FILE), &labels)?;
    save_patches(dir.join(PATCHES_FILE), &patches)?;
    write_file(&dir.join(SPLIT_FILE), split.to_csv())?;

    let train = split.train_counts(&patches.labels, n);
    let test = split.test_counts(&patches.labels, n);
    writeln!(out, "class,total,train,test")?;
    for c in 0..n {
        writeln!(out, "{},{},{},{}", c + 1, train[c] + test[c], train[c], test[c])?;
    }
    writeln!(out, "sum,{},{},{}", patches.len(), split.train.len(), split.test.len())?;
    writeln!(out, "imbalance ratio (train): {:.2}", imbalance_ratio(&train))?;
    writeln!(out, "explained variance ({COMPONENTS} components): {:.4}", pca.explained_ratio())?;
    Ok(())
}

fn load_prepared(cfg: &ExperimentConfig) -> Result<(PatchSet, SplitSpec), AppError> {
    let patches = load_patches(cfg.artifact(PATCHES_FILE))?;
    let split = SplitSpec::from_csv(&read_text(&cfg.artifact(SPLIT_FILE))?, patches.len())?;
    if patches.sp != cfg.sp {
        return Err(AppError::Mismatch(format!("prepared patches have sp={}, config has sp={}", patches.sp, cfg.sp)));
    }
    Ok((patches, split))
}

fn epoch_summary(name: &str, trace: &TrainTrace, out: &mut dyn Write) -> Result<(), AppError> {
    for (e, secs) in trace.epoch_seconds.iter().enumerate() {
        let rows: Vec<_> = trace.rows.iter().filter(|r| r.epoch == e).collect();
        let mean = |f: &dyn Fn(&crate::training::TraceRow) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        write!(out, "{name} epoch {e}:")?;
        match trace.variant {
            Variant::Cnn => write!(out, " loss {:.4}", mean(&|r| r.class_loss))?,
            Variant::Acgan => {
                write!(out, " d {:.4} g {:.4}", mean(&|r| r.d.map(|d| d.total)), mean(&|r| r.g_loss))?
            }
            Variant::Mfegan => {
                let mut c = [0; 3];
                rows.iter().filter_map(|r| r.survivor).for_each(|k| c[k.index()] += 1);
                write!(out, " d {:.4} survivors {}/{}/{}", mean(&|r| r.d.map(|d| d.total)), c[0], c[1], c[2])?
            }
        }
        writeln!(out, " ({secs:.2}s)")?;
    }
    Ok(())
}

fn train_error(name: &str, e: TrainError) -> AppError {
    match e {
        TrainError::Abort { ref last_row, .. } => {
            let last = last_row.as_ref().map(|r| format!("{r:?}")).unwrap_or_else(|| "none".into());
            AppError::Abort(format!("{name}: {e}; last trace row: {last}"))
        }
        TrainError::Config(_) | TrainError::Net(_) => AppError::Input(format!("{name}: {e}")),
        TrainError::Engine(_) => AppError::Abort(format!("{name}: {e}")),
    }
}

/// Trains every configured variant on the prepared training split and writes
/// checkpoints, the per-batch trace and a timing sidecar.
pub fn cmd_train(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), AppError> {
    let (patches, split) = load_prepared(cfg)?;
    let train = patches.select(&split.train);
    for &v in &cfg.variants {
        let name = v.as_str();
        let Some(family) = v.family() else {
            writeln!(out, "{name}: nothing to train")?;
            continue;
        };
        let tc = cfg.train_config(v, patches.classes);
        if tc.oversample {
            writeln!(out, "{name}: random oversampling of the training stream")?;
        }
        let outcome = match family {
            Variant::Cnn => train_cnn(&tc, &train),
            Variant::Acgan => train_acgan(&tc, &train),
            Variant::Mfegan => train_mfegan(&tc, &train),
        }
        .map_err(|e| train_error(name, e))?;
        epoch_summary(name, &outcome.trace, out)?;
        save_params(&cfg.artifact(&format!("{name}.d.mfw")), &outcome.d.net.params)?;
        if let Some(g) = &outcome.g {
            save_params(&cfg.artifact(&format!("{name}.g.mfw")), &g.net.params)?;
        }
        write_file(&cfg.artifact(&format!("{name}.trace.csv")), outcome.trace.to_csv())?;
        write_file(&cfg.artifact(&format!("{name}.timing.csv")), outcome.trace.timing_csv())?;
    }
    Ok(())
}

fn load_discriminator(cfg: &ExperimentConfig, path: &Path, patches: &PatchSet) -> Result<Discriminator, AppError> {
    let spec = NetSpec::with_widths(patches.sp, patches.classes, Z_DIM, cfg.training.widths)
        .map_err(|e| AppError::Input(e.to_string()))?;
    let file = fs::File::open(path).map_err(|e| AppError::Input(format!("cannot open {}: {e}", path.display())))?;
    let records = read_checkpoint(std::io::BufReader::new(file))
        .map_err(|e| AppError::Input(format!("{}: {e}", path.display())))?;
    let mut d = Discriminator::new(spec, 0);
    d.params.load_records(records).map_err(|e| {
        AppError::Mismatch(format!(
            "{} does not fit data with sp={} and {} classes: {e}",
            path.display(),
            patches.sp,
            patches.classes
        ))
    })?;
    Ok(d)
}

fn mean_epoch_seconds(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path).ok()?;
    let secs: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split(',').nth(1)?.parse().ok()).collect();
    (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64)
}

/// Scores every variant on the test split and draws its full-scene map.
///
/// The report's time row is left empty so that reports are reproducible;
/// the measured mean epoch time is printed instead.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), AppError> {
    let (patches, split) = load_prepared(cfg)?;
    let ground = load_labels(cfg.artifact(LABELS_FILE))?;
    let n = patches.classes;
    let all: Vec<usize> = (0..patches.len()).collect();
    let truth: Vec<u16> = split.test.iter().map(|&i| patches.labels[i]).collect();
    for &v in &cfg.variants {
        let name = v.as_str();
        let predicted = if v == VariantName::Knn {
            let train = patches.select(&split.train);
            knn_classify(&train, &patches, cfg.knn_k).map_err(|e| AppError::Input(format!("{name}: {e}")))?
        } else {
            let d = load_discriminator(cfg, &cfg.artifact(&format!("{name}.d.mfw")), &patches)?;
            predict(&d, &patches, &all).map_err(|e| AppError::Abort(format!("{name}: {e}")))?
        };
        let test_pred: Vec<u16> = split.test.iter().map(|&i| predicted[i]).collect();
        let cm = confusion(&truth, &test_pred, n).map_err(|e| AppError::Input(e.to_string()))?;
        let report = metrics(&cm).map_err(|e| AppError::Input(e.to_string()))?;
        write_file(&cfg.artifact(&format!("{name}.report.csv")), report.to_csv())?;

        let mut csv = String::from("index,truth,predicted\n");
        for (&i, &p) in split.test.iter().zip(&test_pred) {
            csv.push_str(&format!("{i},{},{p}\n", patches.labels[i]));
        }
        write_file(&cfg.artifact(&format!("{name}.predictions.csv")), csv)?;

        let mut map = LabelRaster { height: ground.height, width: ground.width, labels: vec![0; ground.labels.len()] };
        for (&px, &p) in patches.pixels.iter().zip(&predicted) {
            map.labels[px] = p;
        }
        let img = render_map(&map).map_err(|e| AppError::Input(e.to_string()))?;
        write_file(&cfg.artifact(&format!("{name}.map.ppm")), img)?;

        write!(out, "{name}: OA {:.2} AA {:.2} Kappa {:.2}", 100.0 * report.oa, 100.0 * report.aa, 100.0 * report.kappa)?;
        match mean_epoch_seconds(&cfg.artifact(&format!("{name}.timing.csv"))) {
            Some(s) => writeln!(out, " time {s:.2}s/epoch")?,
            None => writeln!(out)?,
        }
    }
    Ok(())
}

/// Test-set predictions of one method.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predictions {
    pub index: Vec<usize>,
    pub truth: Vec<u16>,
    pub predicted: Vec<u16>,
}

pub fn parse_predictions(text: &str) -> Result<Predictions, String> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some("index,truth,predicted") {
        return Err("missing 'index,truth,predicted' header".into());
    }
    let mut p = Predictions { index: Vec::new(), truth: Vec::new(), predicted: Vec::new() };
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (f.len() == 3)
            .then(|| Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?)))
            .flatten();
        let (i, t, q) = parsed.ok_or_else(|| format!("line {}: expected three integers", ln + 1))?;
        p.index.push(i);
        p.truth.push(t);
        p.predicted.push(q);
    }
    Ok(p)
}

/// Pairwise McNemar statistics between prediction files over one test set.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), AppError> {
    let files: Vec<PathBuf> = if cfg.compare.predictions.is_empty() {
        cfg.variants.iter().map(|v| cfg.artifact(&format!("{}.predictions.csv", v.as_str()))).collect()
    } else {
        cfg.compare.predictions.iter().map(|p| cfg.resolve(p)).collect()
    };
    if files.len() < 2 {
        return Err(AppError::Input("config key 'compare.predictions': at least two prediction files are needed".into()));
    }
    let mut names = Vec::new();
    let mut preds = Vec::new();
    for f in &files {
        let p = parse_predictions(&read_text(f)?).map_err(|e| AppError::Input(format!("{}: {e}", f.display())))?;
        if let Some(first) = preds.first() {
            let first: &Predictions = first;
            if first.index != p.index || first.truth != p.truth {
                return Err(AppError::Mismatch(format!(
                    "{} and {} cover different test sets",
                    files[0].display(),
                    f.display()
                )));
            }
        }
        let stem = f.file_name().and_then(|s| s.to_str()).unwrap_or("?");
        names.push(stem.strip_suffix(".predictions.csv").unwrap_or(stem).to_string());
        preds.push(p);
    }

    let k = preds.len();
    let mut matrix = vec![0.0; k * k];
    let mut pairs = String::from("a,b,f01,f10,statistic,significant\n");
    for i in 0..k {
        for j in i + 1..k {
            let r = mcnemar(&preds[i].predicted, &preds[j].predicted, &preds[i].truth)
                .map_err(|e| AppError::Mismatch(e.to_string()))?;
            matrix[i * k + j] = r.statistic;
            matrix[j * k + i] = r.statistic;
            pairs.push_str(&format!(
                "{},{},{},{},{:.3},{}\n",
                names[i],
                names[j],
                r.f01,
                r.f10,
                r.statistic,
                r.significant()
            ));
            if r.significant() {
                writeln!(out, "{} vs {}: M_t = {:.3} (significant at 5%)", names[i], names[j], r.statistic)?;
            }
        }
    }
    let mut csv = format!("method,{}\n", names.join(","));
    for i in 0..k {
        let row: Vec<String> = (0..k).map(|j| format!("{:.3}", matrix[i * k + j])).collect();
        csv.push_str(&format!("{},{}\n", names[i], row.join(",")));
    }
    write_file(&cfg.artifact("mcnemar.csv"), &csv)?;
    write_file(&cfg.artifact("mcnemar_pairs.csv"), pairs)?;
    write!(out, "{csv}")?;
    Ok(())
}

/// Draws a label raster (by default the prepared ground truth) as a P6 image.
pub fn cmd_render_map(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), AppError> {
    let src = cfg.render.labels.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| cfg.artifact(LABELS_FILE));
    let dst = cfg.render.output.as_ref().map(|p| cfg.resolve(p)).unwrap_or_else(|| cfg.artifact("ground_truth.ppm"));
    let raster = load_labels(&src)?;
    let img = render_map(&raster).map_err(|e| AppError::Input(format!("{}: {e}", src.display())))?;
    write_file(&dst, img)?;
    writeln!(out, "wrote {}", dst.display())?;
    Ok(())
}
