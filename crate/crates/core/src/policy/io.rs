//! JSON weights file.
//!
//! ```text
//! { "version": 1, "dynamics": "single",
//!   "blocks": [ { "name": "phi_obstacle",
//!                 "shapes": [[64, 2], [64], [16, 64], [16]],
//!                 "values": [[...row-major...], [...], [...], [...]] }, ... ] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, Dense, Mlp, PolicyWeights};
use crate::error::{GlasError, Result};
use crate::world::Dynamics;

pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    version: u32,
    dynamics: Dynamics,
    blocks: Vec<BlockFile>,
}

#[derive(Serialize, Deserialize)]
struct BlockFile {
    name: String,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

fn block_to_file(name: &str, m: &Mlp) -> BlockFile {
    let mut shapes = Vec::new();
    let mut values = Vec::new();
    for l in &m.layers {
        shapes.push(vec![l.n_out, l.n_in]);
        values.push(l.weights.clone());
        shapes.push(vec![l.n_out]);
        values.push(l.bias.clone());
    }
    BlockFile {
        name: name.to_string(),
        shapes,
        values,
    }
}

fn block_from_file(b: &BlockFile, expected: &[usize]) -> Result<Mlp> {
    let n_layers = expected.len() - 1;
    if b.shapes.len() != 2 * n_layers || b.values.len() != 2 * n_layers {
        return Err(GlasError::ShapeMismatch(format!(
            "block {} has {} tensors, expected {}",
            b.name,
            b.shapes.len(),
            2 * n_layers
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let (n_in, n_out) = (expected[k], expected[k + 1]);
        let ws = &b.shapes[2 * k];
        let bs = &b.shapes[2 * k + 1];
        if ws != &[n_out, n_in] || bs != &[n_out] {
            return Err(GlasError::ShapeMismatch(format!(
                "block {} layer {k}: shapes {ws:?}/{bs:?}, expected [{n_out}, {n_in}]/[{n_out}]",
                b.name
            )));
        }
        let (w, bias) = (&b.values[2 * k], &b.values[2 * k + 1]);
        if w.len() != n_in * n_out || bias.len() != n_out {
            return Err(GlasError::ShapeMismatch(format!(
                "block {} layer {k}: value count does not match its shape",
                b.name
            )));
        }
        layers.push(Dense {
            n_in,
            n_out,
            weights: w.clone(),
            bias: bias.clone(),
        });
    }
    Ok(Mlp { layers })
}

pub fn weights_to_json(w: &PolicyWeights) -> Result<String> {
    let file = WeightsFile {
        version: WEIGHTS_VERSION,
        dynamics: w.dynamics,
        blocks: w
            .blocks()
            .iter()
            .map(|(name, m)| block_to_file(name, m))
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses a weights file. `expected` rejects weights trained for other dynamics.
pub fn weights_from_json(text: &str, expected: Option<Dynamics>) -> Result<PolicyWeights> {
    let file: WeightsFile =
        serde_json::from_str(text).map_err(|e| GlasError::Format(format!("weights file: {e}")))?;
    if file.version != WEIGHTS_VERSION {
        return Err(GlasError::Version {
            expected: WEIGHTS_VERSION.to_string(),
            found: file.version.to_string(),
        });
    }
    if let Some(d) = expected {
        if d != file.dynamics {
            return Err(GlasError::ShapeMismatch(format!(
                "weights are for {} integrators, run uses {}",
                file.dynamics.name(),
                d.name()
            )));
        }
    }
    let find = |name: &str| {
        file.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| GlasError::Format(format!("missing block {name}")))
    };
    // widths are inferred from the psi block: [2 * latent + d, hidden, 2]
    let psi = find("psi")?;
    let hidden = psi
        .shapes
        .first()
        .and_then(|s| s.first())
        .copied()
        .unwrap_or(0);
    let latent = find("rho_obstacle")?
        .shapes
        .last()
        .and_then(|s| s.first())
        .copied()
        .unwrap_or(0);
    let arch = Arch { hidden, latent };
    let sizes = arch.block_sizes(file.dynamics);
    let mut mlps = Vec::with_capacity(5);
    for (name, expected) in &sizes {
        mlps.push(block_from_file(find(name)?, expected)?);
    }
    let mut it = mlps.into_iter();
    Ok(PolicyWeights {
        dynamics: file.dynamics,
        phi_obstacle: it.next().unwrap(),
        rho_obstacle: it.next().unwrap(),
        phi_neighbor: it.next().unwrap(),
        rho_neighbor: it.next().unwrap(),
        psi: it.next().unwrap(),
    })
}

pub fn save_weights(w: &PolicyWeights, path: &Path) -> Result<()> {
    let mut text = weights_to_json(w)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| GlasError::io(path, e))
}

pub fn load_weights(path: &Path, expected: Option<Dynamics>) -> Result<PolicyWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| GlasError::io(path, e))?;
    weights_from_json(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::init_weights;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let w = init_weights(12, Dynamics::Double, Arch::default());
        save_weights(&w, &path).unwrap();
        assert_eq!(load_weights(&path, Some(Dynamics::Double)).unwrap(), w);
    }

    #[test]
    fn rejects_bad_files() {
        let w = init_weights(
            1,
            Dynamics::Single,
            Arch {
                hidden: 4,
                latent: 3,
            },
        );
        let text = weights_to_json(&w).unwrap();
        assert!(matches!(
            weights_from_json(&text[..text.len() / 2], None),
            Err(GlasError::Format(_))
        ));
        assert!(matches!(
            weights_from_json(&text, Some(Dynamics::Double)),
            Err(GlasError::ShapeMismatch(_))
        ));
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(
            weights_from_json(&bumped, None),
            Err(GlasError::Version { .. })
        ));
        assert_eq!(weights_from_json(&text, None).unwrap(), w);
    }
}
