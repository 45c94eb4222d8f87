use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use burnscar::classical::{mlp_fit, rf_fit, Classifier, ForestParams, MlpParams, RandomForestModel};
use burnscar::features::{build_dataset, derive_mi_schema, patch_feature_matrix, sample_pixels, FeatureSchema, SchemaVariant};
use burnscar::metrics::{accumulate_labels, compute_metrics, ConfusionCounts, MetricReport, Summary};
use burnscar::raster::BitemporalSample;
use burnscar::{Error, Result};

use super::{load_splits, repeat_seed, write_report};
use crate::{Context, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Rf,
    Mlp,
}

struct Plan {
    method: Method,
    variant: SchemaVariant,
    samples: usize,
    forest: ForestParams,
    mlp: MlpParams,
}

fn read_plan(s: &mut Settings) -> Result<Plan> {
    let method = match s.require("method")?.to_ascii_lowercase().as_str() {
        "rf" => Method::Rf,
        "mlp" => Method::Mlp,
        other => return Err(Error::Config(format!("method: expected rf or mlp, got `{other}`"))),
    };
    let variant = s.get("schema", SchemaVariant::All)?;
    let f = ForestParams::default();
    let forest = ForestParams {
        n_trees: s.get("trees", f.n_trees)?,
        max_depth: s.get("max_depth", f.max_depth)?,
        min_leaf: s.get("min_leaf", f.min_leaf)?,
        max_features: s.take("max_features").map(|v| v.parse().map_err(|_| Error::Config(format!("max_features: cannot parse `{v}`")))).transpose()?,
    };
    let m = MlpParams::default();
    let hidden = match s.take("hidden") {
        None => m.hidden.clone(),
        Some(v) => v
            .split(',')
            .map(|w| w.trim().parse().map_err(|_| Error::Config(format!("hidden: cannot parse `{v}`"))))
            .collect::<Result<_>>()?,
    };
    let mlp = MlpParams {
        hidden,
        learning_rate: s.get("learning_rate", m.learning_rate)?,
        epochs: s.get("epochs", m.epochs)?,
        batch_size: s.get("batch_size", m.batch_size)?,
    };
    Ok(Plan {
        method,
        variant,
        samples: s.get("samples", 20_000usize)?,
        forest,
        mlp,
    })
}

fn write_importances(path: &Path, schema: &FeatureSchema, importances: &[f64]) -> Result<()> {
    let mut text = String::from("feature\timportance\n");
    for (name, v) in schema.names().iter().zip(importances) {
        text.push_str(&format!("{name}\t{v:?}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn score(model: &dyn Classifier, schema: &FeatureSchema, test: &[BitemporalSample]) -> Result<MetricReport> {
    let mut counts = ConfusionCounts::default();
    for sample in test {
        let rows = patch_feature_matrix(schema, sample)?;
        counts += accumulate_labels(&model.predict_labels(&rows)?, sample.truth.labels())?;
    }
    Ok(compute_metrics(&counts))
}

/// One repeat: sample, pick the schema, fit, score on test.
fn repeat(plan: &Plan, train: &[BitemporalSample], test: &[BitemporalSample], seed: u64, r: usize, out: &Path) -> Result<MetricReport> {
    let selection = sample_pixels(train, plan.samples, seed)?;
    let all = FeatureSchema::all(train[0].pre.bands());
    let schema = match plan.variant {
        SchemaVariant::All => all,
        SchemaVariant::Dsi => FeatureSchema::dsi(),
        SchemaVariant::Mi => {
            let data = build_dataset(&all, train, &selection)?;
            let prior = rf_fit(&data.features(), &data.labels(), &plan.forest, seed)?;
            write_importances(&out.join(format!("importances_all_r{r}.tsv")), &all, &prior.feature_importances)?;
            let mi = derive_mi_schema(&all, &prior.feature_importances)?;
            if mi.is_empty() {
                return Err(Error::Fit("no feature has importance above 0.01".into()));
            }
            mi
        }
    };
    fs::write(out.join(format!("schema_r{r}.txt")), schema.to_text())?;
    let data = build_dataset(&schema, train, &selection)?;
    if r == 0 {
        data.write_csv(BufWriter::new(File::create(out.join("train_features.csv"))?))?;
    }
    let (x, y) = (data.features(), data.labels());
    let model_path = out.join(format!("model_r{r}.bin"));
    match plan.method {
        Method::Rf => {
            let model: RandomForestModel = rf_fit(&x, &y, &plan.forest, seed)?;
            write_importances(&out.join(format!("importances_r{r}.tsv")), &schema, &model.feature_importances)?;
            model.to_container().write(&model_path)?;
            score(&model, &schema, test)
        }
        Method::Mlp => {
            let fit = mlp_fit(&x, &y, &plan.mlp, seed)?;
            let trace: String = fit.loss_trace.iter().enumerate().map(|(e, l)| format!("{}\t{l:?}\n", e + 1)).collect();
            fs::write(out.join(format!("loss_r{r}.tsv")), format!("epoch\tloss\n{trace}"))?;
            fit.model.to_container().write(&model_path)?;
            score(&fit.model, &schema, test)
        }
    }
}

pub fn run(mut s: Settings, ctx: &Context) -> Result<()> {
    let plan = read_plan(&mut s)?;
    let repeats = ctx.repeat_count(&mut s)?;
    let root = ctx.root_seed(&mut s)?;
    let manifest = s.path("manifest")?;
    s.finish()?;
    let splits = load_splits(&manifest)?;
    fs::create_dir_all(&ctx.out)?;

    let reports = (0..repeats)
        .map(|r| {
            log::info!("repeat {}/{repeats}", r + 1);
            repeat(&plan, &splits.train, &splits.test, repeat_seed(root, r), r, &ctx.out)
        })
        .collect::<Result<Vec<_>>>()?;
    let name = format!(
        "{}_{}",
        if plan.method == Method::Rf { "rf" } else { "mlp" },
        plan.variant.as_str()
    );
    write_report(&ctx.out, &Summary::from_reports(name, "ml", &reports))
}
