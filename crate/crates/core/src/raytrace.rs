//! Sequential geometric ray tracing through a prescription.
//!
//! Coordinates are in millimetres with the optical axis along +z and the
//! first surface vertex at z = 0. Surfaces are intersected with a Newton
//! iteration on the implicit sphere equation and rays are bent with the
//! vector form of Snell's law.

use std::ops::{Add, Mul, Neg, Sub};

use crate::lens::{LensPrescription, Surface, SurfaceKind, LAMBDA_D_NM};

/// Newton convergence tolerance on the ray parameter, in mm.
pub const NEWTON_TOLERANCE_MM: f64 = 1e-12;
pub const NEWTON_MAX_STEPS: u32 = 32;
/// Stop-plane miss distance accepted by ray aiming, in mm.
pub const AIM_TOLERANCE_MM: f64 = 1e-6;
pub const AIM_MAX_STEPS: u32 = 20;
/// Object distances beyond this many metres are treated as infinitely far.
pub const INFINITY_THRESHOLD_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }
}

impl Add for Vec3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub position: Vec3,
    /// Unit direction cosines.
    pub direction: Vec3,
    pub wavelength_nm: f64,
    pub alive: bool,
}

impl Ray {
    pub fn new(position: Vec3, direction: Vec3, wavelength_nm: f64) -> Self {
        Self {
            position,
            direction: direction.normalized(),
            wavelength_nm,
            alive: true,
        }
    }
}

/// Why a ray stopped propagating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Vignetted,
    Missed,
    NotConverged,
    TotalInternalReflection,
    AimFailed,
}

/// Counters for rays lost during a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceStats {
    pub launched: u64,
    pub arrived: u64,
    pub vignetted: u64,
    pub missed: u64,
    pub not_converged: u64,
    pub total_internal_reflection: u64,
    pub aim_failed: u64,
}

impl TraceStats {
    pub fn record(&mut self, t: Termination) {
        match t {
            Termination::Vignetted => self.vignetted += 1,
            Termination::Missed => self.missed += 1,
            Termination::NotConverged => self.not_converged += 1,
            Termination::TotalInternalReflection => self.total_internal_reflection += 1,
            Termination::AimFailed => self.aim_failed += 1,
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.launched += o.launched;
        self.arrived += o.arrived;
        self.vignetted += o.vignetted;
        self.missed += o.missed;
        self.not_converged += o.not_converged;
        self.total_internal_reflection += o.total_internal_reflection;
        self.aim_failed += o.aim_failed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub point: Vec3,
    /// Unit surface normal, oriented towards +z.
    pub normal: Vec3,
    pub newton_steps: u32,
}

/// Intersects `ray` with `surface` whose vertex sits at `vertex_z`.
///
/// The iteration starts at the vertex tangent plane and refines the ray
/// parameter on `c(x² + y² + z²) - 2z = 0` (local coordinates), which covers
/// planes (`c = 0`) and spheres alike. With `clip` set, hits outside the
/// semi-diameter are reported as vignetted.
pub fn intersect_surface(
    ray: &Ray,
    surface: &Surface,
    vertex_z: f64,
    clip: bool,
) -> Result<SurfaceHit, Termination> {
    let c = surface.curvature;
    let p = Vec3::new(ray.position.x, ray.position.y, ray.position.z - vertex_z);
    let d = ray.direction;
    if d.z <= 1e-12 {
        return Err(Termination::Missed);
    }
    // Start on the vertex tangent plane so the iteration works with
    // coordinates of surface scale rather than object scale.
    let p = p + d * (-p.z / d.z);
    let mut t = 0.0;
    let mut steps = 0;
    if c != 0.0 {
        let pp = p.dot(p);
        let pd = p.dot(d);
        let mut converged = false;
        while steps < NEWTON_MAX_STEPS {
            steps += 1;
            let g = c * (pp + 2.0 * t * pd + t * t) - 2.0 * (p.z + t * d.z);
            let dg = 2.0 * c * (pd + t) - 2.0 * d.z;
            if dg.abs() < 1e-300 {
                return Err(Termination::Missed);
            }
            let dt = g / dg;
            t -= dt;
            if !t.is_finite() {
                return Err(Termination::Missed);
            }
            if dt.abs() < NEWTON_TOLERANCE_MM {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Termination::NotConverged);
        }
    }
    let local = p + d * t;
    let r2 = local.x * local.x + local.y * local.y;
    // The root must lie on the cap that contains the vertex.
    if c * local.z >= 1.0 || c * c * r2 > 1.0 {
        return Err(Termination::Missed);
    }
    if clip && r2 > surface.semi_diameter_mm * surface.semi_diameter_mm {
        return Err(Termination::Vignetted);
    }
    let normal = Vec3::new(-c * local.x, -c * local.y, 1.0 - c * local.z).normalized();
    Ok(SurfaceHit {
        point: Vec3::new(local.x, local.y, local.z + vertex_z),
        normal,
        newton_steps: steps,
    })
}

/// Bends a direction across an interface from index `n1` into `n2`.
///
/// `normal` may face either way. Returns `None` on total internal reflection.
pub fn refract_direction(direction: Vec3, normal: Vec3, n1: f64, n2: f64) -> Option<Vec3> {
    let mut n = normal;
    let mut cos_i = -n.dot(direction);
    if cos_i < 0.0 {
        n = -n;
        cos_i = -cos_i;
    }
    let eta = n1 / n2;
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k < 0.0 {
        return None;
    }
    Some((direction * eta + n * (eta * cos_i - k.sqrt())).normalized())
}

/// Refracts `ray` at a surface with unit `normal`; the returned ray is marked
/// dead on total internal reflection.
pub fn refract(ray: &Ray, normal: Vec3, n1: f64, n2: f64) -> Ray {
    match refract_direction(ray.direction, normal, n1, n2) {
        Some(direction) => Ray { direction, ..*ray },
        None => Ray {
            alive: false,
            ..*ray
        },
    }
}

/// Where light comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectPoint {
    /// Collimated light travelling along `direction`.
    Infinity {
        direction: Vec3,
    },
    Finite {
        position: Vec3,
    },
}

/// Axial object distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectDistance {
    Finite { mm: f64 },
    Infinity,
}

impl ObjectDistance {
    /// Distances above [`INFINITY_THRESHOLD_M`] collapse to infinity.
    pub fn from_meters(d: f64) -> Self {
        if d > INFINITY_THRESHOLD_M || d.is_infinite() {
            ObjectDistance::Infinity
        } else {
            ObjectDistance::Finite { mm: d * 1e3 }
        }
    }

    pub fn meters(self) -> f64 {
        match self {
            ObjectDistance::Finite { mm } => mm * 1e-3,
            ObjectDistance::Infinity => f64::INFINITY,
        }
    }
}

impl ObjectPoint {
    /// Object point at `field_deg` off axis. Azimuth 0 places the object on the
    /// +y half of the meridional plane; positive azimuth rotates it about +z.
    pub fn from_field(field_deg: f64, azimuth_deg: f64, distance: ObjectDistance) -> Self {
        let t = field_deg.to_radians().tan();
        let (s, c) = azimuth_deg.to_radians().sin_cos();
        let (ox, oy) = (-s * t, c * t);
        match distance {
            ObjectDistance::Infinity => ObjectPoint::Infinity {
                direction: Vec3::new(-ox, -oy, 1.0).normalized(),
            },
            ObjectDistance::Finite { mm } => ObjectPoint::Finite {
                position: Vec3::new(ox * mm, oy * mm, -mm),
            },
        }
    }
}

/// Per-surface interaction reported to trace observers.
#[derive(Debug, Clone, Copy)]
pub struct RefractionEvent {
    pub surface: usize,
    pub hit: SurfaceHit,
    pub incoming: Vec3,
    pub outgoing: Vec3,
    pub n1: f64,
    pub n2: f64,
}

/// A prescription resolved at a single wavelength.
#[derive(Debug, Clone)]
pub struct SequentialSystem<'a> {
    lens: &'a LensPrescription,
    vertex_z: Vec<f64>,
    /// Index of the medium following each surface.
    index_after: Vec<f64>,
    wavelength_nm: f64,
    launch_backoff_mm: f64,
}

impl<'a> SequentialSystem<'a> {
    pub fn new(lens: &'a LensPrescription, wavelength_nm: f64) -> Self {
        let index_after = lens
            .surfaces
            .iter()
            .map(|s| {
                s.material
                    .as_ref()
                    .map_or(1.0, |m| m.refractive_index(wavelength_nm))
            })
            .collect();
        let max_sd = lens
            .surfaces
            .iter()
            .map(|s| s.semi_diameter_mm)
            .fold(0.0, f64::max);
        Self {
            lens,
            vertex_z: lens.vertex_positions(),
            index_after,
            wavelength_nm,
            launch_backoff_mm: max_sd + 1.0,
        }
    }

    pub fn lens(&self) -> &LensPrescription {
        self.lens
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    pub fn vertex_z(&self, i: usize) -> f64 {
        self.vertex_z[i]
    }

    pub fn index_before(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.index_after[i - 1]
        }
    }

    pub fn index_after(&self, i: usize) -> f64 {
        self.index_after[i]
    }

    pub fn sensor_index(&self) -> usize {
        self.lens.surfaces.len() - 1
    }

    /// Propagates `ray` through surfaces `from..to`, calling `observe` after
    /// every surface interaction.
    pub fn trace_observed<F: FnMut(&RefractionEvent)>(
        &self,
        ray: &Ray,
        from: usize,
        to: usize,
        clip: bool,
        mut observe: F,
    ) -> Result<Ray, Termination> {
        let mut ray = *ray;
        for i in from..to {
            let surface = &self.lens.surfaces[i];
            let clip_here = clip && surface.kind != SurfaceKind::Sensor;
            let hit = intersect_surface(&ray, surface, self.vertex_z[i], clip_here)?;
            let n1 = self.index_before(i);
            let n2 = self.index_after(i);
            let incoming = ray.direction;
            let outgoing = match surface.kind {
                SurfaceKind::Paraxial { focal_length_mm } => {
                    let u = incoming.x / incoming.z - hit.point.x / focal_length_mm;
                    let v = incoming.y / incoming.z - hit.point.y / focal_length_mm;
                    Vec3::new(u, v, 1.0).normalized()
                }
                SurfaceKind::Sensor => incoming,
                _ if n1 == n2 => incoming,
                _ => refract_direction(incoming, hit.normal, n1, n2)
                    .ok_or(Termination::TotalInternalReflection)?,
            };
            ray.position = hit.point;
            ray.direction = outgoing;
            observe(&RefractionEvent {
                surface: i,
                hit,
                incoming,
                outgoing,
                n1,
                n2,
            });
        }
        Ok(ray)
    }

    pub fn trace(&self, ray: &Ray, from: usize, to: usize, clip: bool) -> Result<Ray, Termination> {
        self.trace_observed(ray, from, to, clip, |_| {})
    }

    /// Ray from `object` through the point `(a, b)` of the first vertex plane.
    pub fn launch(&self, object: &ObjectPoint, a: f64, b: f64) -> Ray {
        let target = Vec3::new(a, b, 0.0);
        match *object {
            ObjectPoint::Finite { position } => {
                Ray::new(position, target - position, self.wavelength_nm)
            }
            ObjectPoint::Infinity { direction } => {
                let back = self.launch_backoff_mm / direction.z;
                Ray::new(target - direction * back, direction, self.wavelength_nm)
            }
        }
    }

    fn stop_crossing(&self, object: &ObjectPoint, a: f64, b: f64) -> Option<(f64, f64)> {
        let ray = self.launch(object, a, b);
        let at_stop = self.trace(&ray, 0, self.lens.stop_index + 1, false).ok()?;
        Some((at_stop.position.x, at_stop.position.y))
    }

    /// Solves for the launch offset `(a, b)` whose ray crosses the stop plane at
    /// `target`, starting from `guess`. Returns the offset, its Jacobian
    /// `d(stop)/d(a, b)` and the number of Newton updates taken.
    pub fn aim(
        &self,
        object: &ObjectPoint,
        target: (f64, f64),
        guess: (f64, f64),
    ) -> Result<AimSolution, Termination> {
        let (mut a, mut b) = guess;
        let h = 1e-6;
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        for iteration in 0..=AIM_MAX_STEPS {
            let (x, y) = self
                .stop_crossing(object, a, b)
                .ok_or(Termination::AimFailed)?;
            let (fx, fy) = (x - target.0, y - target.1);
            let (xa, ya) = self
                .stop_crossing(object, a + h, b)
                .ok_or(Termination::AimFailed)?;
            let (xb, yb) = self
                .stop_crossing(object, a, b + h)
                .ok_or(Termination::AimFailed)?;
            jac = [[(xa - x) / h, (xb - x) / h], [(ya - y) / h, (yb - y) / h]];
            if fx.hypot(fy) < 1e-9 {
                return Ok(AimSolution {
                    launch: (a, b),
                    jacobian: jac,
                    iterations: iteration,
                });
            }
            if iteration == AIM_MAX_STEPS {
                break;
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-14 {
                return Err(Termination::AimFailed);
            }
            a -= (jac[1][1] * fx - jac[0][1] * fy) / det;
            b -= (-jac[1][0] * fx + jac[0][0] * fy) / det;
        }
        // accept a solution that met the public tolerance even if the tight one was missed
        let (x, y) = self
            .stop_crossing(object, a, b)
            .ok_or(Termination::AimFailed)?;
        if (x - target.0).hypot(y - target.1) < AIM_TOLERANCE_MM {
            Ok(AimSolution {
                launch: (a, b),
                jacobian: jac,
                iterations: AIM_MAX_STEPS,
            })
        } else {
            Err(Termination::AimFailed)
        }
    }

    /// Aims the chief ray (stop centre) from `object`.
    pub fn aim_chief(&self, object: &ObjectPoint) -> Result<AimSolution, Termination> {
        let guess = match *object {
            ObjectPoint::Infinity { .. } => (0.0, 0.0),
            ObjectPoint::Finite { position } => {
                // line from the object through the stop centre, intersected with z = 0
                let zs = self.vertex_z[self.lens.stop_index];
                let s = -position.z / (zs - position.z);
                (position.x * (1.0 - s), position.y * (1.0 - s))
            }
        };
        self.aim(object, (0.0, 0.0), guess)
    }

    /// Launch ray for the fully traced path through the whole system.
    pub fn trace_to_sensor(&self, ray: &Ray, clip: bool) -> Result<Ray, Termination> {
        self.trace(ray, 0, self.lens.surfaces.len(), clip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AimSolution {
    pub launch: (f64, f64),
    pub jacobian: [[f64; 2]; 2],
    pub iterations: u32,
}

impl AimSolution {
    /// Linear prediction of the launch offset that reaches `target`, for use
    /// as a Newton starting point.
    pub fn predict(&self, from_target: (f64, f64), target: (f64, f64)) -> (f64, f64) {
        let j = self.jacobian;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 {
            return self.launch;
        }
        let (dx, dy) = (target.0 - from_target.0, target.1 - from_target.1);
        (
            self.launch.0 + (j[1][1] * dx - j[0][1] * dy) / det,
            self.launch.1 + (-j[1][0] * dx + j[0][0] * dy) / det,
        )
    }
}

/// Aims a ray from an infinitely distant object at `field_deg` (meridional)
/// so that it crosses the stop at `pupil_uv` times the stop semi-diameter.
/// Traced at the d line.
pub fn aim_ray(
    lens: &LensPrescription,
    field_deg: f64,
    pupil_uv: (f64, f64),
) -> Result<(Ray, u32), Termination> {
    let system = SequentialSystem::new(lens, LAMBDA_D_NM);
    let object = ObjectPoint::from_field(field_deg, 0.0, ObjectDistance::Infinity);
    let sd = lens.surfaces[lens.stop_index].semi_diameter_mm;
    let target = (pupil_uv.0 * sd, pupil_uv.1 * sd);
    let chief = system.aim_chief(&object)?;
    let sol = system.aim(&object, target, chief.predict((0.0, 0.0), target))?;
    Ok((
        system.launch(&object, sol.launch.0, sol.launch.1),
        sol.iterations,
    ))
}

/// Signed landing point `(x, y)` of the chief ray on the sensor at the d line.
pub fn chief_ray_landing(
    lens: &LensPrescription,
    field_deg: f64,
    azimuth_deg: f64,
    distance: ObjectDistance,
) -> Result<(f64, f64), Termination> {
    let system = SequentialSystem::new(lens, LAMBDA_D_NM);
    let object = ObjectPoint::from_field(field_deg, azimuth_deg, distance);
    let chief = system.aim_chief(&object)?;
    let ray = system.launch(&object, chief.launch.0, chief.launch.1);
    let out = system.trace_to_sensor(&ray, false)?;
    Ok((out.position.x, out.position.y))
}

/// Radial image height of the chief ray (d line, no vignetting).
pub fn chief_ray_height(
    lens: &LensPrescription,
    field_deg: f64,
    distance: ObjectDistance,
) -> Result<f64, Termination> {
    chief_ray_landing(lens, field_deg, 0.0, distance).map(|(x, y)| x.hypot(y))
}

/// Field angle whose chief ray lands at `height_mm`, found by bisection on
/// `[0, max_field_deg]`.
pub fn field_for_image_height(
    lens: &LensPrescription,
    height_mm: f64,
    distance: ObjectDistance,
    max_field_deg: f64,
) -> Option<f64> {
    if height_mm <= 0.0 {
        return Some(0.0);
    }
    let top = chief_ray_height(lens, max_field_deg, distance).ok()?;
    if top < height_mm {
        return None;
    }
    let (mut lo, mut hi) = (0.0, max_field_deg);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        match chief_ray_height(lens, mid, distance) {
            Ok(h) if h < height_mm => lo = mid,
            Ok(_) => hi = mid,
            Err(_) => return None,
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::bundled;

    fn axial_ray() -> Ray {
        Ray::new(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 1.0), 550.0)
    }

    #[test]
    fn flat_surface_advances_exactly() {
        let lens = bundled::mos_s1();
        let flat = &lens.surfaces[3];
        let hit = intersect_surface(&axial_ray(), flat, 7.25, true).unwrap();
        assert_eq!(hit.point, Vec3::new(0.0, 0.0, 7.25));
        assert_eq!(hit.newton_steps, 0);
    }

    #[test]
    fn vignettes_beyond_semi_diameter() {
        let lens = bundled::mos_s1();
        let s = &lens.surfaces[2]; // semi-diameter 5.594
        let ray = Ray::new(Vec3::new(0.0, 6.0, -1.0), Vec3::new(0.0, 0.0, 1.0), 550.0);
        assert_eq!(
            intersect_surface(&ray, s, 0.0, true),
            Err(Termination::Vignetted)
        );
        assert!(intersect_surface(&ray, s, 0.0, false).is_ok());
    }

    #[test]
    fn sphere_hit_matches_quadratic_formula() {
        let lens = bundled::mos_s1();
        let s = &lens.surfaces[2]; // R = -8.711
        let r = s.radius_mm();
        let ray = Ray::new(
            Vec3::new(0.3, 1.7, -2.0),
            Vec3::new(0.05, -0.12, 1.0),
            550.0,
        );
        let hit = intersect_surface(&ray, s, 0.0, true).unwrap();
        // |p + t d - C|^2 = R^2 with C = (0, 0, R)
        let c = Vec3::new(0.0, 0.0, r);
        let oc = ray.position - c;
        let bq = oc.dot(ray.direction);
        let cq = oc.dot(oc) - r * r;
        let disc = (bq * bq - cq).sqrt();
        let roots = [-bq - disc, -bq + disc];
        let t = roots
            .iter()
            .copied()
            .map(|t| ray.position + ray.direction * t)
            .min_by(|p, q| p.z.abs().partial_cmp(&q.z.abs()).unwrap())
            .unwrap();
        assert!((hit.point - t).norm() < 1e-10);
        assert!(((hit.point - c).norm() - r.abs()).abs() < 1e-10);
    }

    #[test]
    fn normal_incidence_unchanged() {
        let d = Vec3::new(0.0, 0.0, 1.0);
        let out = refract_direction(d, Vec3::new(0.0, 0.0, 1.0), 1.0, 1.7).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn snell_thirty_degrees() {
        let th = 30f64.to_radians();
        let d = Vec3::new(0.0, th.sin(), th.cos());
        let out = refract_direction(d, Vec3::new(0.0, 0.0, -1.0), 1.0, 1.5).unwrap();
        let th2 = out.y.atan2(out.z).to_degrees();
        // arcsin(1/3) = 19.4712206...
        assert!((th2 - 19.471_220_634_490_69).abs() < 1e-9, "{th2}");
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_internal_reflection_kills_ray() {
        let th = 60f64.to_radians();
        let ray = Ray::new(Vec3::default(), Vec3::new(0.0, th.sin(), th.cos()), 550.0);
        let out = refract(&ray, Vec3::new(0.0, 0.0, 1.0), 1.5, 1.0);
        assert!(!out.alive);
    }

    #[test]
    fn refraction_is_reversible() {
        let d = Vec3::new(0.2, -0.3, 0.9).normalized();
        let n = Vec3::new(0.1, 0.05, 1.0).normalized();
        let out = refract_direction(d, n, 1.0, 1.62).unwrap();
        let back = refract_direction(-out, n, 1.62, 1.0).unwrap();
        assert!((back + d).norm() < 1e-9);
    }

    #[test]
    fn on_axis_chief_ray_is_axial() {
        let lens = bundled::six_p();
        let (ray, _) = aim_ray(&lens, 0.0, (0.0, 0.0)).unwrap();
        assert!(ray.position.x.abs() < 1e-12 && ray.position.y.abs() < 1e-12);
        assert_eq!(ray.direction, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn stop_first_lens_aims_without_iterating() {
        let lens = bundled::mos_s1();
        for field in [0.0, 5.0, 15.0, 21.3] {
            let (_, iterations) = aim_ray(&lens, field, (0.4, -0.7)).unwrap();
            assert!(iterations <= 1, "field {field}: {iterations}");
        }
    }

    #[test]
    fn six_p_aimed_ray_hits_stop_target() {
        let lens = bundled::six_p();
        let (ray, _) = aim_ray(&lens, 10.0, (0.5, 0.0)).unwrap();
        let system = SequentialSystem::new(&lens, LAMBDA_D_NM);
        let at_stop = system.trace(&ray, 0, lens.stop_index + 1, false).unwrap();
        assert!((at_stop.position.x - 0.5 * 8.131).abs() < 1e-6);
        assert!(at_stop.position.y.abs() < 1e-6);
    }

    #[test]
    fn far_objects_collapse_to_infinity() {
        assert_eq!(ObjectDistance::from_meters(10.5), ObjectDistance::Infinity);
        assert_eq!(
            ObjectDistance::from_meters(10.0),
            ObjectDistance::Finite { mm: 10_000.0 }
        );
    }

    #[test]
    fn chief_height_grows_with_field() {
        let lens = bundled::mos_s1();
        let h1 = chief_ray_height(&lens, 5.0, ObjectDistance::Infinity).unwrap();
        let h2 = chief_ray_height(&lens, 15.0, ObjectDistance::Infinity).unwrap();
        assert!(h2 > h1 && h1 > 0.0);
        let f = field_for_image_height(&lens, h1, ObjectDistance::Infinity, 21.3).unwrap();
        assert!((f - 5.0).abs() < 1e-8);
    }
}
