//! Opinion analytics: MOS, tendency, AMR/ARR, correlation and cross-dimension maps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use maxvqa_core::analytics::{correlation_map, cross_dimension_matrix, ScoreTable, Tendency};
use maxvqa_core::dimensions::{codes, registry};

use super::ensure_dir;
use crate::config::RunConfig;
use crate::data;
use crate::error::{CliResult, CoreContext, Kind, Tag};
use crate::figures;

fn ratio(t: &Tendency) -> String {
    if t.infinite {
        "inf".into()
    } else {
        t.ratio.to_string()
    }
}

pub fn run(config: &RunConfig, predictions: Option<&Path>) -> CliResult<Vec<String>> {
    let table = data::annotations(config)?;
    let out = &config.paths.output;
    ensure_dir(out)?;
    let mut written = Vec::new();
    let path_str = |p: &Path| p.display().to_string();

    let codes: Vec<&str> = codes().collect();
    let amr = codes.iter().map(|c| table.amr(c)).collect::<maxvqa_core::Result<Vec<f64>>>()?;
    let arr = codes.iter().map(|c| table.arr(c)).collect::<maxvqa_core::Result<Vec<f64>>>()?;
    let bars = out.join("amr_arr.png");
    figures::paired_bars(&codes, &amr, &arr, ["amr", "arr"], &bars).kind(Kind::Data)?;
    written.push(path_str(&bars));

    let tendency_path = out.join("tendency.csv");
    let write_tendency = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(&tendency_path)?;
        w.write_record(["code", "positive", "negative", "ratio"])?;
        let mut rows: Vec<(String, maxvqa_core::Result<Tendency>)> =
            codes.iter().map(|c| (c.to_string(), table.tendency(c))).collect();
        rows.push(("all".into(), table.tendency_over(&codes)));
        for (code, t) in rows {
            match t {
                Ok(t) => w.write_record([code, t.positive.to_string(), t.negative.to_string(), ratio(&t)])?,
                Err(_) => w.write_record([code, "0".into(), "0".into(), String::new()])?,
            }
        }
        w.flush()?;
        Ok(())
    };
    write_tendency().kind(Kind::Data)?;
    written.push(path_str(&tendency_path));

    let mos = table.mos_matrix()?;
    let mos_path = out.join("mos.csv");
    mos.write_csv(BufWriter::new(File::create(&mos_path)?))?;
    written.push(path_str(&mos_path));

    let corr = correlation_map(mos.values.view()).context(|| "correlation map over MOS".into())?;
    let corr_path = out.join("correlation.png");
    figures::heatmap(corr.view(), &corr_path).kind(Kind::Data)?;
    written.push(path_str(&corr_path));

    if let Some(pred_path) = predictions {
        let file = File::open(pred_path).tag(Kind::Data, || format!("opening {}", pred_path.display()))?;
        let preds = ScoreTable::read_csv(file).context(|| format!("reading {}", pred_path.display()))?;
        let cross = cross_dimension_matrix(&preds, &mos).context(|| "cross-dimension matrix".into())?;
        let cross_path = out.join("cross_dimension.png");
        figures::heatmap(cross.matrix.view(), &cross_path).kind(Kind::Data)?;
        written.push(path_str(&cross_path));
        let best_path = out.join("cross_dimension_best.csv");
        let dominant = cross.diagonal_dominant_rows();
        let write_best = || -> anyhow::Result<()> {
            let mut w = csv::Writer::from_path(&best_path)?;
            w.write_record(["predicted", "best_subjective", "diagonal_dominant"])?;
            for (p, &best) in cross.row_argmax.iter().enumerate() {
                w.write_record([registry()[p].code, registry()[best].code, &dominant[p].to_string()])?;
            }
            w.flush()?;
            Ok(())
        };
        write_best().kind(Kind::Data)?;
        written.push(path_str(&best_path));
    }
    Ok(written)
}
