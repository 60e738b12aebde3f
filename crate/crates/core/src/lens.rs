//! Lens prescriptions, glass dispersion, sensor geometry and spectral weights.
//!
//! A prescription is an ordered list of surfaces. Each surface carries the
//! medium that follows it (`material`, `None` for air) and the axial distance
//! to the next vertex. The final entry is always the sensor plane.
//!
//! Prescriptions are stored as TOML documents with one `[[surface]]` table per
//! surface; see the bundled files under `lenses/` for the format.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Fraunhofer d line, where `n(λ) = n_d`.
pub const LAMBDA_D_NM: f64 = 587.56;
/// Fraunhofer F line.
pub const LAMBDA_F_NM: f64 = 486.13;
/// Fraunhofer C line.
pub const LAMBDA_C_NM: f64 = 656.27;

/// Named glasses referenced by the bundled prescriptions, as `(name, n_d, V_d)`.
pub const GLASS_CATALOG: &[(&str, f64, f64)] = &[
    ("H-K9L", 1.5168, 64.20),
    ("LAF2", 1.744, 44.72),
    ("PSK3", 1.55232, 63.46),
    ("SF1", 1.71736, 29.51),
];

/// An optical glass described by its d-line index and Abbe number.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: Option<String>,
    pub n_d: f64,
    pub v_d: f64,
}

impl Material {
    pub fn new(n_d: f64, v_d: f64) -> Self {
        Self {
            name: None,
            n_d,
            v_d,
        }
    }

    pub fn from_catalog(name: &str) -> Option<Self> {
        GLASS_CATALOG
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .map(|&(n, n_d, v_d)| Self {
                name: Some(n.to_string()),
                n_d,
                v_d,
            })
    }

    /// Coefficients `(A, B)` of the two-term Cauchy model `n = A + B/λ²`
    /// (λ in nm) that reproduces `n_d` and `V_d`.
    pub fn cauchy_coefficients(&self) -> (f64, f64) {
        let dispersion = (self.n_d - 1.0) / self.v_d;
        let b = dispersion / (LAMBDA_F_NM.powi(-2) - LAMBDA_C_NM.powi(-2));
        let a = self.n_d - b / (LAMBDA_D_NM * LAMBDA_D_NM);
        (a, b)
    }

    pub fn refractive_index(&self, lambda_nm: f64) -> f64 {
        let (a, b) = self.cauchy_coefficients();
        a + b / (lambda_nm * lambda_nm)
    }
}

/// Refractive index of `material` at `lambda_nm`; air (`None`) is 1.
pub fn refractive_index(material: Option<&Material>, lambda_nm: f64) -> f64 {
    material.map_or(1.0, |m| m.refractive_index(lambda_nm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    ApertureStop,
    Sphere,
    /// Ideal thin lens: a plane that maps ray slopes `u -> u - h/f`.
    Paraxial {
        focal_length_mm: f64,
    },
    Sensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub kind: SurfaceKind,
    /// Vertex curvature `1/R` in mm⁻¹; zero for a plane.
    pub curvature: f64,
    pub thickness_mm: f64,
    /// Medium after this surface, `None` for air.
    pub material: Option<Material>,
    pub semi_diameter_mm: f64,
    pub conic: f64,
}

impl Surface {
    pub fn radius_mm(&self) -> f64 {
        if self.curvature == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.curvature
        }
    }

    pub fn is_flat(&self) -> bool {
        self.curvature == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensPrescription {
    pub id: String,
    pub surfaces: Vec<Surface>,
    pub stop_index: usize,
    pub focal_length_mm: f64,
    pub f_number: f64,
    pub fov_deg: f64,
}

impl LensPrescription {
    pub fn sensor(&self) -> &Surface {
        self.surfaces
            .last()
            .expect("validated prescription has a sensor")
    }

    pub fn half_fov_deg(&self) -> f64 {
        0.5 * self.fov_deg
    }

    /// Axial position of each surface vertex, first surface at z = 0.
    pub fn vertex_positions(&self) -> Vec<f64> {
        let mut z = 0.0;
        self.surfaces
            .iter()
            .map(|s| {
                let here = z;
                z += s.thickness_mm;
                here
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.surfaces.len();
        if n < 2 {
            return Err(Error::InvalidPrescription(
                "need at least one optical surface and a sensor".into(),
            ));
        }
        let mut stops = Vec::new();
        for (i, s) in self.surfaces.iter().enumerate() {
            let bad = |message: &str| Error::InvalidSurface {
                surface: i + 1,
                message: message.to_string(),
            };
            if !(s.semi_diameter_mm > 0.0 && s.semi_diameter_mm.is_finite()) {
                return Err(bad("semi-diameter must be positive"));
            }
            if !(s.thickness_mm >= 0.0 && s.thickness_mm.is_finite()) {
                return Err(bad("thickness must be non-negative"));
            }
            if !s.curvature.is_finite() {
                return Err(bad("radius must be finite or Infinite"));
            }
            if s.conic != 0.0 {
                return Err(bad("conic surfaces are not supported"));
            }
            if let Some(m) = &s.material {
                if !(m.n_d > 1.0) {
                    return Err(bad("material n_d must exceed 1"));
                }
                if !(m.v_d > 0.0) {
                    return Err(bad("material V_d must be positive"));
                }
            }
            match s.kind {
                SurfaceKind::ApertureStop => {
                    if !s.is_flat() {
                        return Err(bad("aperture stop must be planar"));
                    }
                    stops.push(i);
                }
                SurfaceKind::Sensor => {
                    if i + 1 != n {
                        return Err(bad("sensor must be the last surface"));
                    }
                    if s.material.is_some() {
                        return Err(bad("sensor cannot carry a material"));
                    }
                }
                SurfaceKind::Paraxial { focal_length_mm } => {
                    if !(focal_length_mm.is_finite() && focal_length_mm != 0.0) {
                        return Err(bad("paraxial focal length must be finite and non-zero"));
                    }
                    if !s.is_flat() {
                        return Err(bad("paraxial surface must be planar"));
                    }
                }
                SurfaceKind::Sphere => {}
            }
        }
        if self.surfaces[n - 1].kind != SurfaceKind::Sensor {
            return Err(Error::InvalidSurface {
                surface: n,
                message: "last surface must be the sensor".into(),
            });
        }
        match stops.as_slice() {
            [] => Err(Error::InvalidPrescription("no aperture stop".into())),
            [one] if *one != self.stop_index => Err(Error::InvalidPrescription(
                "stop index does not point at the aperture surface".into(),
            )),
            [_] => Ok(()),
            [_, second, ..] => Err(Error::InvalidSurface {
                surface: second + 1,
                message: "more than one aperture stop".into(),
            }),
        }?;
        if !(self.focal_length_mm > 0.0 && self.f_number > 0.0 && self.fov_deg > 0.0) {
            return Err(Error::InvalidPrescription(
                "focal length, f-number and field of view must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Multiplies every finite radius, every thickness and every glass `n_d`
    /// by an independent factor drawn uniformly from `[1 - fraction, 1 + fraction]`.
    pub fn perturb(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "perturbation fraction {fraction} outside [0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factor = move || rng.random_range((1.0 - fraction)..=(1.0 + fraction));
        let mut out = self.clone();
        for s in &mut out.surfaces {
            if s.kind == SurfaceKind::Sensor {
                continue;
            }
            if s.curvature != 0.0 {
                // radius scales by f, so curvature scales by 1/f
                s.curvature /= factor();
            }
            s.thickness_mm *= factor();
            if let Some(m) = &mut s.material {
                let f = factor();
                if f != 1.0 {
                    m.n_d *= f;
                    m.name = None;
                }
            }
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "id = {:?}", self.id);
        let _ = writeln!(out, "focal_length_mm = {:?}", self.focal_length_mm);
        let _ = writeln!(out, "f_number = {:?}", self.f_number);
        let _ = writeln!(out, "fov_deg = {:?}", self.fov_deg);
        for s in &self.surfaces {
            out.push_str("\n[[surface]]\n");
            let kind = match s.kind {
                SurfaceKind::ApertureStop => "aperture",
                SurfaceKind::Sphere => "sphere",
                SurfaceKind::Paraxial { .. } => "paraxial",
                SurfaceKind::Sensor => "sensor",
            };
            let _ = writeln!(out, "kind = \"{kind}\"");
            if let SurfaceKind::Paraxial { focal_length_mm } = s.kind {
                let _ = writeln!(out, "focal_length_mm = {focal_length_mm:?}");
            }
            if s.kind != SurfaceKind::Sensor {
                if s.is_flat() {
                    out.push_str("radius_mm = \"Infinite\"\n");
                } else {
                    let _ = writeln!(out, "radius_mm = {:?}", s.radius_mm());
                }
                let _ = writeln!(out, "thickness_mm = {:?}", s.thickness_mm);
            }
            match &s.material {
                Some(Material {
                    name: Some(name), ..
                }) => {
                    let _ = writeln!(out, "material = {name:?}");
                }
                Some(m) => {
                    let _ = writeln!(out, "material = {{ n_d = {:?}, v_d = {:?} }}", m.n_d, m.v_d);
                }
                None => {}
            }
            let _ = writeln!(out, "semi_diameter_mm = {:?}", s.semi_diameter_mm);
            let _ = writeln!(out, "conic = {:?}", s.conic);
        }
        out
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LensDoc {
    id: String,
    focal_length_mm: f64,
    f_number: f64,
    fov_deg: f64,
    #[serde(rename = "surface")]
    surfaces: Vec<SurfaceDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceDoc {
    kind: String,
    radius_mm: Option<RadiusDoc>,
    thickness_mm: Option<f64>,
    material: Option<MaterialDoc>,
    semi_diameter_mm: f64,
    #[serde(default)]
    conic: f64,
    focal_length_mm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RadiusDoc {
    Value(f64),
    Word(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MaterialDoc {
    Name(String),
    Custom { n_d: f64, v_d: f64 },
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a prescription document.
pub fn load_prescription(text: &str) -> Result<LensPrescription> {
    let doc: LensDoc = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;

    let mut surfaces = Vec::with_capacity(doc.surfaces.len());
    let mut stop_index = None;
    for (i, sd) in doc.surfaces.into_iter().enumerate() {
        let bad = |message: String| Error::InvalidSurface {
            surface: i + 1,
            message,
        };
        let kind = match sd.kind.to_ascii_lowercase().as_str() {
            "aperture" | "aper" | "stop" => SurfaceKind::ApertureStop,
            "sphere" | "standard" => SurfaceKind::Sphere,
            "sensor" | "image" => SurfaceKind::Sensor,
            "paraxial" => SurfaceKind::Paraxial {
                focal_length_mm: sd
                    .focal_length_mm
                    .ok_or_else(|| bad("paraxial surface needs focal_length_mm".into()))?,
            },
            other => return Err(bad(format!("unknown surface kind {other:?}"))),
        };
        if kind == SurfaceKind::ApertureStop {
            stop_index.get_or_insert(i);
        }
        let curvature = match sd.radius_mm {
            None => 0.0,
            Some(RadiusDoc::Word(w)) => match w.to_ascii_lowercase().as_str() {
                "infinite" | "infinity" | "inf" | "flat" => 0.0,
                _ => return Err(bad(format!("unrecognised radius {w:?}"))),
            },
            Some(RadiusDoc::Value(0.0)) => {
                return Err(bad("radius of 0 mm; use \"Infinite\" for a plane".into()))
            }
            Some(RadiusDoc::Value(r)) if r.is_infinite() => 0.0,
            Some(RadiusDoc::Value(r)) => 1.0 / r,
        };
        let material = match sd.material {
            None => None,
            Some(MaterialDoc::Name(name)) => Some(
                Material::from_catalog(&name)
                    .ok_or_else(|| bad(format!("unknown glass {name:?}")))?,
            ),
            Some(MaterialDoc::Custom { n_d, v_d }) => Some(Material::new(n_d, v_d)),
        };
        surfaces.push(Surface {
            kind,
            curvature,
            thickness_mm: sd.thickness_mm.unwrap_or(0.0),
            material,
            semi_diameter_mm: sd.semi_diameter_mm,
            conic: sd.conic,
        });
    }

    let lens = LensPrescription {
        id: doc.id,
        surfaces,
        stop_index: stop_index.unwrap_or(usize::MAX),
        focal_length_mm: doc.focal_length_mm,
        f_number: doc.f_number,
        fov_deg: doc.fov_deg,
    };
    lens.validate()?;
    Ok(lens)
}

pub mod bundled {
    //! The four prescriptions shipped with the crate.

    use super::{load_prescription, LensPrescription};

    pub const MOS_S1: &str = include_str!("../lenses/mos-s1.toml");
    pub const MOS_S2: &str = include_str!("../lenses/mos-s2.toml");
    pub const DOUBLE_GAUSS: &str = include_str!("../lenses/double-gauss.toml");
    pub const SIX_P: &str = include_str!("../lenses/6p.toml");

    pub const DOCUMENTS: [&str; 4] = [MOS_S1, MOS_S2, DOUBLE_GAUSS, SIX_P];

    pub fn mos_s1() -> LensPrescription {
        load_prescription(MOS_S1).expect("bundled MOS-S1 is valid")
    }

    pub fn mos_s2() -> LensPrescription {
        load_prescription(MOS_S2).expect("bundled MOS-S2 is valid")
    }

    pub fn double_gauss() -> LensPrescription {
        load_prescription(DOUBLE_GAUSS).expect("bundled Double Gauss is valid")
    }

    pub fn six_p() -> LensPrescription {
        load_prescription(SIX_P).expect("bundled 6P is valid")
    }

    pub fn all() -> Vec<LensPrescription> {
        vec![mos_s1(), mos_s2(), double_gauss(), six_p()]
    }

    pub fn by_id(id: &str) -> Option<LensPrescription> {
        all().into_iter().find(|l| l.id.eq_ignore_ascii_case(id))
    }
}

/// Pixel grid of the sensor: counts and physical pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub height_px: usize,
    pub width_px: usize,
    pub pitch_h_mm: f64,
    pub pitch_w_mm: f64,
}

impl SensorSpec {
    pub fn new(
        height_px: usize,
        width_px: usize,
        pitch_h_mm: f64,
        pitch_w_mm: f64,
    ) -> Result<Self> {
        if height_px == 0 || width_px == 0 || !(pitch_h_mm > 0.0) || !(pitch_w_mm > 0.0) {
            return Err(Error::InvalidArgument(
                "sensor dimensions and pitch must be positive".into(),
            ));
        }
        Ok(Self {
            height_px,
            width_px,
            pitch_h_mm,
            pitch_w_mm,
        })
    }

    /// Square pixels sized so the sensor diagonal spans `2 * semi_diagonal_mm`.
    pub fn from_semi_diagonal(
        height_px: usize,
        width_px: usize,
        semi_diagonal_mm: f64,
    ) -> Result<Self> {
        let diag_px = ((height_px * height_px + width_px * width_px) as f64).sqrt();
        let pitch = 2.0 * semi_diagonal_mm / diag_px;
        Self::new(height_px, width_px, pitch, pitch)
    }

    pub fn semi_diagonal_mm(&self) -> f64 {
        let h = 0.5 * self.height_px as f64 * self.pitch_h_mm;
        let w = 0.5 * self.width_px as f64 * self.pitch_w_mm;
        h.hypot(w)
    }

    /// Width of the Gaussian energy splat, one third of the pixel diagonal.
    pub fn splat_sigma_mm(&self) -> f64 {
        self.pitch_h_mm.hypot(self.pitch_w_mm) / 3.0
    }

    /// Physical position (x, y) in mm of the center of pixel `(row, col)`,
    /// measured from the optical axis.
    pub fn pixel_center_mm(&self, row: f64, col: f64) -> (f64, f64) {
        let x = (col + 0.5 - 0.5 * self.width_px as f64) * self.pitch_w_mm;
        let y = (row + 0.5 - 0.5 * self.height_px as f64) * self.pitch_h_mm;
        (x, y)
    }
}

/// Color channel order used throughout the crate.
pub const CHANNELS: [&str; 3] = ["R", "G", "B"];

/// Per-channel sampled wavelengths and their normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    channels: [Vec<(f64, f64)>; 3],
}

impl SpectralResponse {
    /// Builds a response from `(wavelength_nm, weight)` lists; weights are
    /// normalized to unit sum per channel.
    pub fn new(channels: [Vec<(f64, f64)>; 3]) -> Result<Self> {
        let mut channels = channels;
        for (c, samples) in channels.iter_mut().enumerate() {
            if samples.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "channel {} has no wavelength samples",
                    CHANNELS[c]
                )));
            }
            if samples
                .iter()
                .any(|&(l, w)| !(w >= 0.0) || !(380.0..=780.0).contains(&l))
            {
                return Err(Error::InvalidArgument(format!(
                    "channel {} has a negative weight or out-of-range wavelength",
                    CHANNELS[c]
                )));
            }
            let total: f64 = samples.iter().map(|&(_, w)| w).sum();
            if !(total > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "channel {} weights sum to zero",
                    CHANNELS[c]
                )));
            }
            for s in samples.iter_mut() {
                s.1 /= total;
            }
        }
        Ok(Self { channels })
    }

    /// One wavelength per channel with weight 1.
    pub fn monochromatic(r_nm: f64, g_nm: f64, b_nm: f64) -> Result<Self> {
        Self::new([vec![(r_nm, 1.0)], vec![(g_nm, 1.0)], vec![(b_nm, 1.0)]])
    }

    pub fn channel(&self, c: usize) -> &[(f64, f64)] {
        &self.channels[c]
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().flatten().map(|&(l, _)| l)
    }
}

impl Default for SpectralResponse {
    fn default() -> Self {
        let tri = |a, b, c| vec![(a, 1.0), (b, 2.0), (c, 1.0)];
        Self::new([
            tri(610.0, 590.0, 570.0),
            tri(555.0, 535.0, 515.0),
            tri(480.0, 460.0, 440.0),
        ])
        .expect("default response is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_mos_s1_with_stop_first() {
        let lens = bundled::mos_s1();
        assert_eq!(lens.stop_index, 0);
        assert_eq!(lens.surfaces.len(), 6);
        assert_eq!(lens.surfaces[0].kind, SurfaceKind::ApertureStop);
        assert_eq!(lens.surfaces[0].thickness_mm, 0.200);
        assert_eq!(
            lens.surfaces[1].material.as_ref().unwrap().name.as_deref(),
            Some("H-K9L")
        );
        assert!(lens.surfaces[0].is_flat());
        assert_eq!(lens.focal_length_mm, 20.0);
        assert_eq!(lens.f_number, 5.0);
    }

    #[test]
    fn loads_mos_s2_custom_material() {
        let lens = bundled::mos_s2();
        assert_eq!(lens.surfaces.len(), 4);
        let m = lens.surfaces[1].material.as_ref().unwrap();
        assert_eq!((m.n_d, m.v_d), (1.95, 81.6));
        assert_eq!(lens.sensor().kind, SurfaceKind::Sensor);
    }

    #[test]
    fn stop_indices_of_bundled_lenses() {
        let stops: Vec<usize> = bundled::all().iter().map(|l| l.stop_index).collect();
        assert_eq!(stops, vec![0, 0, 5, 2]);
    }

    #[test]
    fn rejects_two_apertures() {
        let doc = bundled::MOS_S2.replacen("kind = \"sphere\"", "kind = \"aperture\"", 1);
        // the replaced surface also has a curvature, so flatten it first
        let doc = doc.replacen("radius_mm = -52.628", "radius_mm = \"Infinite\"", 1);
        match load_prescription(&doc) {
            Err(Error::InvalidSurface { surface, message }) => {
                assert_eq!(surface, 2);
                assert!(message.contains("more than one"), "{message}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_semi_diameter() {
        let doc = bundled::MOS_S1.replace("semi_diameter_mm = 5.594", "semi_diameter_mm = 0.0");
        match load_prescription(&doc) {
            Err(Error::InvalidSurface { surface, .. }) => assert_eq!(surface, 3),
            other => panic!("expected validation error, got {other:?}"),
        }
        let doc = bundled::MOS_S1.replace("semi_diameter_mm = 5.594", "semi_diameter_mm = -1.0");
        assert!(load_prescription(&doc).is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let doc = "id = \"x\"\nfocal_length_mm = 20.0\nf_number = oops\n";
        match load_prescription(doc) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_glass_and_conic() {
        let doc = bundled::MOS_S1.replace("H-K9L", "UNOBTAINIUM");
        assert!(matches!(
            load_prescription(&doc),
            Err(Error::InvalidSurface { surface: 2, .. })
        ));
        let doc = bundled::MOS_S1.replacen("conic = 0.0", "conic = -1.0", 1);
        assert!(load_prescription(&doc).is_err());
    }

    #[test]
    fn round_trip_preserves_numbers() {
        for doc in bundled::DOCUMENTS {
            let lens = load_prescription(doc).unwrap();
            let again = load_prescription(&lens.to_toml()).unwrap();
            assert_eq!(lens.id, again.id);
            for (a, b) in lens.surfaces.iter().zip(&again.surfaces) {
                assert_eq!(a.kind, b.kind);
                if a.is_flat() {
                    assert!(b.is_flat());
                } else {
                    assert!((a.radius_mm() - b.radius_mm()).abs() < 1e-9);
                }
                assert!((a.thickness_mm - b.thickness_mm).abs() < 1e-9);
                assert!((a.semi_diameter_mm - b.semi_diameter_mm).abs() < 1e-9);
                assert_eq!(a.material, b.material);
            }
        }
    }

    #[test]
    fn cauchy_hits_anchor_and_abbe() {
        for lens in bundled::all() {
            for m in lens.surfaces.iter().filter_map(|s| s.material.as_ref()) {
                assert!((m.refractive_index(LAMBDA_D_NM) - m.n_d).abs() < 1e-12);
                let abbe = (m.n_d - 1.0)
                    / (m.refractive_index(LAMBDA_F_NM) - m.refractive_index(LAMBDA_C_NM));
                assert!((abbe - m.v_d).abs() < 1e-9, "{abbe} vs {}", m.v_d);
            }
        }
    }

    #[test]
    fn cauchy_hand_evaluation_at_550() {
        // A = 1.50458393462, B = 4217.31259163 nm^2 (evaluated by hand)
        let m = Material::new(1.5168, 64.17);
        let d = (1.5168 - 1.0) / 64.17;
        let inv_f = 1.0 / (486.13f64 * 486.13);
        let inv_c = 1.0 / (656.27f64 * 656.27);
        let b = d / (inv_f - inv_c);
        let a = 1.5168 - b / (587.56f64 * 587.56);
        let expected = a + b / (550.0f64 * 550.0);
        assert!((m.refractive_index(550.0) - expected).abs() < 1e-12);
        // frozen value of the same closed form
        assert!((expected - 1.518_525_463_852).abs() < 1e-11, "{expected}");
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let lens = bundled::six_p();
        assert_eq!(lens.perturb(0.0, 3).unwrap(), lens);
    }

    #[test]
    fn perturbation_is_seeded_and_bounded() {
        let lens = bundled::mos_s1();
        let a = lens.perturb(0.1, 7).unwrap();
        let b = lens.perturb(0.1, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, lens.perturb(0.1, 8).unwrap());
        assert_eq!(a.stop_index, lens.stop_index);
        for (o, p) in lens.surfaces.iter().zip(&a.surfaces) {
            assert_eq!(o.kind, p.kind);
            if !o.is_flat() {
                let r = p.radius_mm() / o.radius_mm();
                assert!((0.9..=1.1).contains(&r), "radius ratio {r}");
            } else {
                assert!(p.is_flat());
            }
        }
        assert!(lens.perturb(1.0, 0).is_err());
    }

    #[test]
    fn default_spectral_response_is_normalized() {
        let s = SpectralResponse::default();
        for c in 0..3 {
            let total: f64 = s.channel(c).iter().map(|&(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-15);
            assert_eq!(s.channel(c).len(), 3);
        }
        assert_eq!(s.channel(1)[1], (535.0, 0.5));
    }

    #[test]
    fn sensor_semi_diagonal_round_trip() {
        let s = SensorSpec::from_semi_diagonal(1280, 1920, 7.8).unwrap();
        assert!((s.semi_diagonal_mm() - 7.8).abs() < 1e-12);
        assert!((s.splat_sigma_mm() - s.pitch_h_mm * 2f64.sqrt() / 3.0).abs() < 1e-15);
        assert!(SensorSpec::new(0, 10, 1.0, 1.0).is_err());
    }
}
