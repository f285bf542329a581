//! Exports behind the kernel and representation analyses: learned filters
//! as CSV and pre-pooling feature maps as TSV.

use std::io::Write;

use crate::audio::Sample;
use crate::error::{Error, Result};
use crate::model::{Model, ParamKind};
use crate::nn::Mode;
use crate::train::stack;

/// One row per output filter: `(index, taps)` with taps flattened
/// row-major over `in_channels x kernel`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTable {
    pub layer: String,
    pub rows: Vec<(usize, Vec<f32>)>,
}

/// Convolution weight names in network order (`conv1d1`,
/// `nucleus1.branch0.conv0`, ...).
pub fn conv_layers(model: &Model<f32>) -> Vec<String> {
    model
        .params()
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Weight)
        .filter_map(|(n, _)| n.strip_suffix(".weight").map(str::to_string))
        .collect()
}

/// `layer` accepts a layer name or its `.weight` parameter name; `None`
/// selects the first convolution.
pub fn export_filters(model: &Model<f32>, layer: Option<&str>) -> Result<FilterTable> {
    let layers = conv_layers(model);
    let name = match layer {
        None => layers.first().cloned().ok_or_else(|| Error::Data("model has no convolutions".into()))?,
        Some(l) => {
            let l = l.strip_suffix(".weight").unwrap_or(l);
            if !layers.iter().any(|c| c == l) {
                return Err(Error::Data(format!("no convolution named '{l}'; available: {}", layers.join(", "))));
            }
            l.to_string()
        }
    };
    let w = &model.params().by_name(&format!("{name}.weight")).expect("listed above").value;
    let per = w.len() / w.shape()[0];
    let rows = w.data().chunks(per).enumerate().map(|(i, c)| (i, c.to_vec())).collect();
    Ok(FilterTable { layer: name, rows })
}

impl FilterTable {
    /// Header `filter,tap0,tap1,...`; values use the shortest decimal that
    /// parses back to the same `f32`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let taps = self.rows.first().map_or(0, |r| r.1.len());
        let mut header = vec!["filter".to_string()];
        header.extend((0..taps).map(|i| format!("tap{i}")));
        w.write_record(&header)?;
        for (i, vals) in &self.rows {
            let mut rec = vec![i.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inference-mode input to global average pooling, flattened row-major as
/// `channel x height x width`.
pub fn embedding(model: &Model<f32>, sample: &Sample) -> Result<Vec<f32>> {
    let fwd = model.forward(&stack(&[sample])?, Mode::Infer)?;
    Ok(model.features_before_gap(&fwd.tape)?.data().to_vec())
}

/// Writes `source_id<TAB>label<TAB>f0<TAB>f1...`, one row per sample, under a
/// header row. Every row has the same width because clips share a length.
pub fn write_embeddings<W: Write>(model: &Model<f32>, samples: &[Sample], mut out: W) -> Result<usize> {
    let mut width = None;
    for s in samples {
        let e = embedding(model, s)?;
        match width {
            None => {
                let cols: Vec<String> = (0..e.len()).map(|i| format!("f{i}")).collect();
                writeln!(out, "source_id\tlabel\t{}", cols.join("\t"))?;
                width = Some(e.len());
            }
            Some(w) if w != e.len() => {
                return Err(Error::Data(format!("sample '{}' yields {} features, earlier rows {w}", s.source_id, e.len())));
            }
            Some(_) => {}
        }
        let vals: Vec<String> = e.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}\t{}\t{}", s.source_id, s.label, vals.join("\t"))?;
    }
    Ok(samples.len())
}
