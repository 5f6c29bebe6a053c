//! CSV and JSON emission for cost reports, table comparisons, benchmark
//! results and training trajectories. CSV columns are stable interfaces;
//! the JSON mirrors carry exact integers.

use crate::bench::BenchResult;
use crate::cost::{human_units, ModelCost};
use crate::error::Result;
use crate::train::EpochStats;
use crate::zoo::tables::RowComparison;

pub fn cost_csv(cost: &ModelCost) -> String {
    let mut out = String::from("layer,op,out_channels,out_height,out_width,flops_mac,params\n");
    for r in &cost.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name, r.op, r.out_channels, r.out_height, r.out_width, r.flops, r.params
        ));
    }
    out.push_str(&format!(
        "total,,,,,{},{}\n",
        cost.total.flops, cost.total.params
    ));
    out
}

pub fn cost_json(cost: &ModelCost) -> Result<String> {
    serde_json::to_string_pretty(cost).map_err(|e| crate::error::Error::Format(e.to_string()))
}

/// Comparison table against the embedded published rows.
/// Columns: model, variant, G_or_P, flops_mac, params, ratio_vs_standard,
/// then the published values and the verdict.
pub fn comparison_csv(rows: &[RowComparison]) -> String {
    let mut out = String::from(
        "table,label,model,variant,G_or_P,flops_mac,params,flops_human,params_human,\
         paper_flops,paper_params,flops_dev,params_dev,tolerance,status\n",
    );
    for c in rows {
        let alpha = c.row.policy.map(|(_, a, _)| a.to_string()).unwrap_or_else(|| "-".into());
        let status = if !c.row.gated {
            "REFERENCE"
        } else if c.pass {
            "PASS"
        } else {
            "FAIL"
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{}\n",
            c.row.table,
            c.row.label,
            c.row.model,
            c.row.variant,
            alpha,
            c.computed.flops,
            c.computed.params,
            human_units(c.computed.flops),
            human_units(c.computed.params),
            c.row.flops,
            c.row.params,
            c.flops_deviation,
            c.params_deviation,
            c.row.tolerance,
            status
        ));
    }
    out
}

pub fn comparison_json(rows: &[RowComparison]) -> Result<String> {
    #[derive(serde::Serialize)]
    struct Row<'a> {
        table: &'a str,
        label: &'a str,
        model: &'a str,
        variant: &'a str,
        g_or_p: Option<usize>,
        flops_mac: u128,
        params: u128,
        paper_flops: f64,
        paper_params: f64,
        flops_deviation: f64,
        params_deviation: f64,
        tolerance: f64,
        gated: bool,
        pass: bool,
    }
    let rows: Vec<Row> = rows
        .iter()
        .map(|c| Row {
            table: c.row.table,
            label: c.row.label,
            model: c.row.model,
            variant: c.row.variant,
            g_or_p: c.row.policy.map(|(_, a, _)| a),
            flops_mac: c.computed.flops,
            params: c.computed.params,
            paper_flops: c.row.flops,
            paper_params: c.row.params,
            flops_deviation: c.flops_deviation,
            params_deviation: c.params_deviation,
            tolerance: c.row.tolerance,
            gated: c.row.gated,
            pass: c.pass,
        })
        .collect();
    serde_json::to_string_pretty(&rows).map_err(|e| crate::error::Error::Format(e.to_string()))
}

pub fn bench_csv(results: &[BenchResult]) -> String {
    let mut out =
        String::from("id,warmup,runs,median_ns,mad_ns,macs,macs_per_sec\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3e}\n",
            r.id.replace(',', ";"),
            r.warmup,
            r.runs,
            r.median_ns,
            r.mad_ns,
            r.macs,
            r.macs_per_sec
        ));
    }
    out
}

pub fn bench_json(results: &[BenchResult]) -> Result<String> {
    serde_json::to_string_pretty(results).map_err(|e| crate::error::Error::Format(e.to_string()))
}

pub fn trajectory_csv(trajectory: &[EpochStats]) -> String {
    let mut out = String::from("epoch,lr,train_loss,test_accuracy\n");
    for e in trajectory {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.lr, e.train_loss, e.test_accuracy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::model_cost;
    use crate::zoo::parse_config;

    #[test]
    fn cost_csv_has_total_row() {
        let cfg = parse_config(
            "model t input 1 3 8 8\nconv c kind=std M=3 N=4 K=3 s=1 p=1\n",
        )
        .unwrap();
        let cost = model_cost(&cfg).unwrap();
        let csv = cost_csv(&cost);
        assert!(csv.lines().count() == 3);
        assert!(csv.lines().last().unwrap().starts_with("total"));
        let json = cost_json(&cost).unwrap();
        assert!(json.contains("\"flops\""));
    }
}
