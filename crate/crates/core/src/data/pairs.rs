//! On-disk layout: `clean/*.png` inputs and `pairs/<id>/` synthesized samples
//! holding `x.png` (16-bit), `y.png` (8-bit), `k.rt`, `y_lin.rt` and
//! `meta.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{load_image, save_image, BitDepth};
use crate::error::{Error, Result};
use crate::sim::{BlurKernel, DegradedPair, NoiseParams};
use crate::tensor::raw;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairMeta {
    id: String,
    seed: u64,
    height: usize,
    width: usize,
    kernel_side: usize,
    params: NoiseParams,
}

/// Sorted PNG files directly inside `dir`.
pub fn list_clean_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_pair(dir: impl AsRef<Path>, id: &str, pair: &DegradedPair) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_image(&pair.x, dir.join("x.png"), BitDepth::Sixteen)?;
    save_image(&pair.y, dir.join("y.png"), BitDepth::Eight)?;
    raw::write(dir.join("k.rt"), &pair.k.to_tensor::<f32>())?;
    raw::write(dir.join("y_lin.rt"), &pair.y_lin.cast::<f32>())?;
    let meta = PairMeta {
        id: id.to_string(),
        seed: pair.seed,
        height: pair.x.shape()[1],
        width: pair.x.shape()[2],
        kernel_side: pair.k.side(),
        params: pair.params.clone(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Load a pair directory. `x` and `y` carry their PNG quantization; the
/// kernel is renormalized after the 32-bit round trip.
pub fn read_pair(dir: impl AsRef<Path>) -> Result<DegradedPair> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: PairMeta = serde_json::from_str(&text)?;
    let k = BlurKernel::from_tensor(&raw::read::<f64>(dir.join("k.rt"))?)?;
    let pair = DegradedPair {
        x: load_image(dir.join("x.png"))?,
        y: load_image(dir.join("y.png"))?,
        y_lin: raw::read::<f64>(dir.join("y_lin.rt"))?,
        k,
        params: meta.params,
        seed: meta.seed,
    };
    let expect = [3, meta.height, meta.width];
    if pair.x.shape() != expect || pair.y.shape() != expect || pair.y_lin.shape() != expect {
        return Err(Error::format(dir, "pair files disagree on image size"));
    }
    Ok(pair)
}
