//! On-disk case directories and prediction files.
//!
//! A dataset directory holds one subdirectory per case:
//!
//! ```text
//! <dataset>/<case_id>/image.nii   f32, (D, W, H, 4) raw contrasts
//! <dataset>/<case_id>/label.nii   u8,  (D, W, H)    disjoint labels 0..=3
//! <dataset>/<case_id>/meta.json   id, spacing, provenance, foreground checksum
//! ```
//!
//! A prediction directory holds `<case_id>/mask.nii` (u8, `(D, W, H, 3)`) and
//! optionally `<case_id>/probs.nii` (f32, same shape). Channel order is always
//! WT, TC, ET. Voxel spacing is written into the NIfTI header as well.

use std::fs;
use std::path::{Path, PathBuf};

use bytemuck::Pod;
use ndarray::{Array3, Array4, ArrayBase, Data, Dimension, IxDyn, RemoveAxis};
use nifti::writer::WriterOptions;
use nifti::{DataElement, IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{case_id, case_seed, Case};
use crate::discrepancy::DiscrepancyMask;
use crate::error::{Error, Result};
use crate::phantom::{generate_case, PhantomSpec};
use crate::volume::{DisjointLabelMap, MultiContrastVolume, Provenance, RegionMask, SoftPrediction, Spacing, CONTRASTS};

pub const IMAGE_FILE: &str = "image.nii";
pub const LABEL_FILE: &str = "label.nii";
pub const META_FILE: &str = "meta.json";
pub const MASK_FILE: &str = "mask.nii";
pub const PROBS_FILE: &str = "probs.nii";

/// Sidecar metadata of a stored case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub provenance: Provenance,
    /// SHA-256 of the nonzero-voxel mask of the raw image.
    pub foreground_sha256: String,
}

fn foreground_sha256(vol: &MultiContrastVolume) -> String {
    let bits: Vec<u8> = vol.nonzero_mask().iter().map(|&b| u8::from(b)).collect();
    hex::encode(Sha256::digest(&bits))
}

fn header(spacing: Spacing) -> NiftiHeader {
    let mut h = NiftiHeader::default();
    h.pixdim[1] = spacing[0] as f32;
    h.pixdim[2] = spacing[1] as f32;
    h.pixdim[3] = spacing[2] as f32;
    h
}

fn write_nii<A, S, D>(path: &Path, data: &ArrayBase<S, D>, spacing: Spacing) -> Result<()>
where
    S: Data<Elem = A>,
    A: DataElement + Pod,
    D: Dimension + RemoveAxis,
{
    let h = header(spacing);
    WriterOptions::new(path)
        .reference_header(&h)
        .write_nifti(data)
        .map_err(|source| Error::Nifti {
            path: path.to_owned(),
            source,
        })
}

fn read_nii<T>(path: &Path) -> Result<(ndarray::Array<T, IxDyn>, Spacing)>
where
    T: DataElement,
{
    let nerr = |source| Error::Nifti {
        path: path.to_owned(),
        source,
    };
    let obj = ReaderOptions::new().read_file(path).map_err(nerr)?;
    let p = obj.header().pixdim;
    let spacing = [p[1] as f64, p[2] as f64, p[3] as f64];
    let data = obj.into_volume().into_ndarray::<T>().map_err(nerr)?;
    Ok((data, spacing))
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_owned(),
        reason: reason.into(),
    }
}

fn to4(path: &Path, a: ndarray::Array<f32, IxDyn>) -> Result<Array4<f32>> {
    a.into_dimensionality().map_err(|e| malformed(path, e.to_string()))
}

/// `(C, D, W, H)` to the on-disk `(D, W, H, C)` order.
fn channels_last<T: Clone>(a: &Array4<T>) -> Array4<T> {
    a.view().permuted_axes([1, 2, 3, 0]).as_standard_layout().to_owned()
}

fn channels_first<T: Clone>(a: Array4<T>) -> Array4<T> {
    a.permuted_axes([3, 0, 1, 2]).as_standard_layout().to_owned()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes one raw case (image, labels, metadata) into `dir`.
pub fn write_case(dir: &Path, id: &str, raw: &MultiContrastVolume, labels: &DisjointLabelMap) -> Result<()> {
    if raw.dims() != labels.dims() {
        let (a, b) = (raw.dims(), labels.dims());
        return Err(Error::shape(&a, &b));
    }
    create_dir(dir)?;
    write_nii(&dir.join(IMAGE_FILE), &channels_last(&raw.data), raw.spacing)?;
    write_nii(&dir.join(LABEL_FILE), &labels.labels, labels.spacing)?;
    let meta = CaseMeta {
        id: id.to_owned(),
        dims: raw.dims(),
        spacing: raw.spacing,
        provenance: raw.meta.clone(),
        foreground_sha256: foreground_sha256(raw),
    };
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<CaseMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a raw case and checks it against its metadata.
pub fn read_case(dir: &Path) -> Result<(CaseMeta, MultiContrastVolume, DisjointLabelMap)> {
    let meta = read_meta(dir)?;
    let image_path = dir.join(IMAGE_FILE);
    let (image, _) = read_nii::<f32>(&image_path)?;
    let image = channels_first(to4(&image_path, image)?);
    if image.shape() != [CONTRASTS, meta.dims[0], meta.dims[1], meta.dims[2]] {
        return Err(malformed(&image_path, format!("shape {:?} disagrees with meta dims {:?}", image.shape(), meta.dims)));
    }
    let vol = MultiContrastVolume::new(image, meta.spacing, meta.provenance.clone())?;
    if foreground_sha256(&vol) != meta.foreground_sha256 {
        return Err(malformed(&image_path, "foreground checksum mismatch"));
    }
    let label_path = dir.join(LABEL_FILE);
    let (labels, _) = read_nii::<u8>(&label_path)?;
    let labels: Array3<u8> = labels
        .into_dimensionality()
        .map_err(|e| malformed(&label_path, e.to_string()))?;
    let labels = DisjointLabelMap::new(labels.as_standard_layout().to_owned(), meta.spacing)?;
    if labels.dims() != meta.dims {
        return Err(malformed(&label_path, "label dims disagree with meta"));
    }
    Ok((meta, vol, labels))
}

/// Reads and preprocesses one case.
pub fn load_case(dir: &Path) -> Result<Case> {
    let (meta, raw, labels) = read_case(dir)?;
    Case::new(meta.id, &raw, labels)
}

/// Case subdirectories of `dataset`, sorted by name.
pub fn list_cases(dataset: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dataset).map_err(|e| Error::io(dataset, e))? {
        let path = entry.map_err(|e| Error::io(dataset, e))?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Empty("dataset directory has no cases"));
    }
    Ok(dirs)
}

/// Loads and preprocesses every case of a dataset directory.
pub fn load_dataset(dataset: &Path) -> Result<Vec<Case>> {
    list_cases(dataset)?.iter().map(|d| load_case(d)).collect()
}

/// Generates `count` phantom cases into `out`; returns their ids.
pub fn write_phantom_dataset(out: &Path, spec: &PhantomSpec, count: usize) -> Result<Vec<String>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let id = case_id(i);
            let (raw, labels) = generate_case(&spec.with_seed(case_seed(spec.seed, i)), i as u64)?;
            write_case(&out.join(&id), &id, &raw, &labels)?;
            Ok(id)
        })
        .collect()
}

pub fn write_mask(path: &Path, mask: &RegionMask) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_nii(path, &channels_last(&mask.channels), mask.spacing)
}

pub fn read_mask(path: &Path) -> Result<RegionMask> {
    let (a, spacing) = read_nii::<u8>(path)?;
    let a: Array4<u8> = a.into_dimensionality().map_err(|e| malformed(path, e.to_string()))?;
    RegionMask::new(channels_first(a), spacing)
}

pub fn write_discrepancy(path: &Path, delta: &DiscrepancyMask) -> Result<()> {
    write_mask(
        path,
        &RegionMask {
            channels: delta.channels.clone(),
            spacing: delta.spacing,
        },
    )
}

pub fn read_discrepancy(path: &Path) -> Result<DiscrepancyMask> {
    let m = read_mask(path)?;
    DiscrepancyMask::new(
        m.channels,
        m.spacing,
        Provenance::File {
            path: path.display().to_string(),
        },
    )
}

pub fn write_probs(path: &Path, pred: &SoftPrediction) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_nii(path, &channels_last(&pred.probs), pred.spacing)
}

pub fn read_probs(path: &Path) -> Result<SoftPrediction> {
    let (a, spacing) = read_nii::<f32>(path)?;
    let pred = SoftPrediction {
        probs: channels_first(to4(path, a)?),
        spacing,
    };
    if !pred.in_unit_range() {
        return Err(malformed(path, "probabilities outside [0, 1]"));
    }
    Ok(pred)
}

/// `(case id, mask path)` for every `<id>/mask.nii` under `dir`, sorted.
pub fn list_masks(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let mask = path.join(MASK_FILE);
        if mask.is_file() {
            let id = path.file_name().expect("entry has a name").to_string_lossy().into_owned();
            out.push((id, mask));
        }
    }
    out.sort();
    Ok(out)
}
