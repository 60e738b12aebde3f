use std::path::Path;
use std::sync::Arc;

use lensforge::field::FieldModel;
use lensforge::lens::{bundled, load_prescription, LensPrescription};
use lensforge::preset::Preset;
use lensforge::psflib::PsfLibrary;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Library,
    Field,
}

/// One entry of `GET /api/lenses`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LensInfo {
    pub id: String,
    /// Millimetres.
    pub focal_length: f64,
    pub f_number: f64,
    /// Full field of view, degrees.
    pub fov: f64,
    pub source: SourceKind,
    pub sources: Vec<SourceKind>,
}

/// Patch grid used when a lens is rendered through a neural field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldGrid {
    pub n_h: usize,
    pub n_w: usize,
    pub patch_px: usize,
}

impl FieldGrid {
    pub fn from_preset(p: &Preset) -> Self {
        Self {
            n_h: p.sensor_height_px / p.patch_px,
            n_w: p.sensor_width_px / p.patch_px,
            patch_px: p.patch_px,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LensAsset {
    pub prescription: LensPrescription,
    pub library: Option<Arc<PsfLibrary>>,
    pub field: Option<(Arc<FieldModel>, FieldGrid)>,
}

impl LensAsset {
    pub fn info(&self) -> LensInfo {
        let mut sources = Vec::new();
        if self.library.is_some() {
            sources.push(SourceKind::Library);
        }
        if self.field.is_some() {
            sources.push(SourceKind::Field);
        }
        let p = &self.prescription;
        LensInfo {
            id: p.id.clone(),
            focal_length: p.focal_length_mm,
            f_number: p.f_number,
            fov: p.fov_deg,
            source: sources[0],
            sources,
        }
    }
}

/// Lenses the service can render, each backed by a PSF library, a neural
/// field, or both.
#[derive(Debug, Clone, Default)]
pub struct LensAssets {
    lenses: Vec<LensAsset>,
}

impl LensAssets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.lenses.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lenses.len()
    }

    pub fn get(&self, id: &str) -> Option<&LensAsset> {
        self.lenses.iter().find(|l| l.prescription.id == id)
    }

    /// Bundled lenses first in their usual order, then the rest by id.
    pub fn list(&self) -> Vec<LensInfo> {
        self.lenses.iter().map(LensAsset::info).collect()
    }

    fn entry(&mut self, lens: &LensPrescription) -> &mut LensAsset {
        let pos = match self
            .lenses
            .iter()
            .position(|l| l.prescription.id == lens.id)
        {
            Some(i) => i,
            None => {
                self.lenses.push(LensAsset {
                    prescription: lens.clone(),
                    library: None,
                    field: None,
                });
                self.sort();
                self.lenses
                    .iter()
                    .position(|l| l.prescription.id == lens.id)
                    .unwrap()
            }
        };
        &mut self.lenses[pos]
    }

    fn sort(&mut self) {
        let order: Vec<String> = bundled::all().into_iter().map(|l| l.id).collect();
        self.lenses.sort_by_key(|l| {
            let id = &l.prescription.id;
            (
                order.iter().position(|o| o == id).unwrap_or(order.len()),
                id.clone(),
            )
        });
    }

    pub fn add_library(
        &mut self,
        lens: &LensPrescription,
        lib: PsfLibrary,
    ) -> Result<(), ServiceError> {
        if lib.lens_id != lens.id {
            return Err(ServiceError::Assets(format!(
                "library for {:?} registered under lens {:?}",
                lib.lens_id, lens.id
            )));
        }
        self.entry(lens).library = Some(Arc::new(lib));
        Ok(())
    }

    /// Registers every lens of `model` that appears in `lenses`.
    pub fn add_field(
        &mut self,
        lenses: &[LensPrescription],
        model: FieldModel,
        grid: FieldGrid,
    ) -> Result<(), ServiceError> {
        let model = Arc::new(model);
        let mut added = 0;
        for id in &model.lens_ids {
            if let Some(lens) = lenses.iter().find(|l| &l.id == id) {
                self.entry(lens).field = Some((model.clone(), grid));
                added += 1;
            }
        }
        if added == 0 {
            return Err(ServiceError::Assets(format!(
                "field model covers {:?}, none of which has a prescription",
                model.lens_ids
            )));
        }
        Ok(())
    }

    /// Loads `*.psfl` libraries and `*.olf` field models from `dir`. Lens
    /// facts come from `<id>.toml` in the same directory or the bundled
    /// prescriptions. Field models use the grid of the first library, or the
    /// desk preset grid if there is none.
    pub fn from_dir(dir: &Path) -> Result<Self, ServiceError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| ServiceError::Assets(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        paths.sort();
        let ext = |p: &Path, want: &str| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(want))
        };

        let mut prescriptions: Vec<LensPrescription> = bundled::all();
        for p in paths.iter().filter(|p| ext(p, "toml")) {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ServiceError::Assets(format!("{}: {e}", p.display())))?;
            match load_prescription(&text) {
                Ok(lens) => {
                    prescriptions.retain(|l| l.id != lens.id);
                    prescriptions.push(lens);
                }
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        }
        let find = |id: &str| prescriptions.iter().find(|l| l.id == id).cloned();

        let mut assets = Self::new();
        let mut grid = None;
        for p in paths.iter().filter(|p| ext(p, "psfl")) {
            let lib = PsfLibrary::load(p).map_err(|e| ServiceError::Assets(e.to_string()))?;
            let lens = find(&lib.lens_id).ok_or_else(|| {
                ServiceError::Assets(format!(
                    "{}: no prescription for lens {:?}",
                    p.display(),
                    lib.lens_id
                ))
            })?;
            grid.get_or_insert(FieldGrid {
                n_h: lib.grid.n_h,
                n_w: lib.grid.n_w,
                patch_px: lib.grid.patch_px,
            });
            log::info!("loaded library {} for {}", p.display(), lens.id);
            assets.add_library(&lens, lib)?;
        }
        let grid = grid.unwrap_or_else(|| FieldGrid::from_preset(&Preset::desk()));
        for p in paths.iter().filter(|p| ext(p, "olf")) {
            let model = FieldModel::load(p).map_err(|e| ServiceError::Assets(e.to_string()))?;
            log::info!(
                "loaded field model {} for {:?}",
                p.display(),
                model.lens_ids
            );
            assets.add_field(&prescriptions, model, grid)?;
        }
        Ok(assets)
    }
}
