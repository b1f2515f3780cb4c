//! Invariant-distribution polytopes and their planar picture.
//!
//! Vertices of the state-action polytope come from deterministic policies
//! restricted to one of their recurrent classes; the state polytope is the
//! hull of their action marginals. For three states the simplex is drawn as
//! an equilateral triangle with state 0 lower-left, state 1 lower-right and
//! state 2 on top.

use std::fmt::Write as _;

use serde::Serialize;

use crate::chain::{class_stationary, deterministic_chain, recurrent_classes};
use crate::error::{invalid, Result};
use crate::lp::in_convex_hull;
use crate::mdp::Mdp;
use crate::optimize::{deterministic_policies, DEFAULT_ENUMERATION_CAP};

pub const GEOMETRY_SCHEMA_VERSION: u32 = 1;
const DEDUP_TOL: f64 = 1e-9;
const HULL_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub actions: Vec<usize>,
    pub class: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupancyPolytope {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flattened `psi[s * n_actions + a]`.
    pub psi_vertices: Vec<Vec<f64>>,
    pub generator_policies: Vec<Generator>,
    pub phi_vertices: Vec<Vec<f64>>,
    /// Index into `psi_vertices` whose marginal gives each phi vertex.
    pub phi_sources: Vec<usize>,
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= DEDUP_TOL)
}

/// Indices of the points that are not convex combinations of the others.
fn extreme_indices(points: &[Vec<f64>]) -> Vec<usize> {
    if points.len() <= 1 {
        return (0..points.len()).collect();
    }
    (0..points.len())
        .filter(|&i| {
            let others: Vec<Vec<f64>> =
                points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p.clone()).collect();
            !in_convex_hull(&others, &points[i], HULL_TOL)
        })
        .collect()
}

pub fn compute_polytope(mdp: &Mdp) -> Result<OccupancyPolytope> {
    compute_polytope_with_cap(mdp, DEFAULT_ENUMERATION_CAP)
}

pub fn compute_polytope_with_cap(mdp: &Mdp, cap: u64) -> Result<OccupancyPolytope> {
    let (n, k) = (mdp.n_states(), mdp.n_actions());
    let mut psis: Vec<Vec<f64>> = Vec::new();
    let mut generators = Vec::new();
    for actions in deterministic_policies(mdp, None, cap)? {
        let p = deterministic_chain(mdp, &actions);
        for class in recurrent_classes(&p) {
            let phi = class_stationary(&p, &class)?;
            let mut psi = vec![0.0; n * k];
            for s in 0..n {
                psi[s * k + actions[s]] = phi[s];
            }
            if !psis.iter().any(|q| close(q, &psi)) {
                psis.push(psi);
                generators.push(Generator { actions: actions.clone(), class });
            }
        }
    }
    let keep = extreme_indices(&psis);
    let psi_vertices: Vec<Vec<f64>> = keep.iter().map(|&i| psis[i].clone()).collect();
    let generator_policies: Vec<Generator> = keep.iter().map(|&i| generators[i].clone()).collect();

    let mut marginals: Vec<Vec<f64>> = Vec::new();
    let mut sources = Vec::new();
    for (i, psi) in psi_vertices.iter().enumerate() {
        let phi: Vec<f64> = (0..n).map(|s| psi[s * k..(s + 1) * k].iter().sum()).collect();
        if !marginals.iter().any(|q| close(q, &phi)) {
            marginals.push(phi);
            sources.push(i);
        }
    }
    let keep = extreme_indices(&marginals);
    Ok(OccupancyPolytope {
        n_states: n,
        n_actions: k,
        phi_vertices: keep.iter().map(|&i| marginals[i].clone()).collect(),
        phi_sources: keep.iter().map(|&i| sources[i]).collect(),
        psi_vertices,
        generator_policies,
    })
}

impl OccupancyPolytope {
    /// Largest flow-constraint violation over the psi vertices.
    pub fn flow_residual(&self, mdp: &Mdp) -> f64 {
        let (n, k) = (self.n_states, self.n_actions);
        let mut worst: f64 = 0.0;
        for psi in &self.psi_vertices {
            for next in 0..n {
                let inflow: f64 = (0..n)
                    .flat_map(|s| (0..k).map(move |a| (s, a)))
                    .map(|(s, a)| psi[s * k + a] * mdp.prob(a, s, next))
                    .sum();
                let outflow: f64 = psi[next * k..(next + 1) * k].iter().sum();
                worst = worst.max((inflow - outflow).abs());
            }
            worst = worst.max((psi.iter().sum::<f64>() - 1.0).abs());
        }
        worst
    }

    pub fn contains_phi(&self, phi: &[f64], tol: f64) -> bool {
        in_convex_hull(&self.phi_vertices, phi, tol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiMaximum {
    pub vertex_index: usize,
    pub vertex: Vec<f64>,
    pub value: f64,
    /// Every vertex within the tie tolerance of the best value.
    pub ties: Vec<usize>,
}

pub fn maximize_over_phi(polytope: &OccupancyPolytope, objective: &[f64]) -> Result<PhiMaximum> {
    if polytope.phi_vertices.is_empty() {
        return invalid("polytope has no vertices");
    }
    if objective.len() != polytope.n_states {
        return invalid("objective length does not match the state count");
    }
    let values: Vec<f64> = polytope
        .phi_vertices
        .iter()
        .map(|phi| phi.iter().zip(objective).map(|(p, o)| p * o).sum())
        .collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= best - TIE_TOL).collect();
    let vertex_index = (0..values.len()).find(|&i| values[i] == best).expect("nonempty");
    Ok(PhiMaximum { vertex_index, vertex: polytope.phi_vertices[vertex_index].clone(), value: best, ties })
}

type Point = [f64; 2];

const CORNERS: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.866_025_403_784_438_6]];

/// Planar position of a distribution over three states.
pub fn embed_point(phi: &[f64]) -> Point {
    let mut out = [0.0; 2];
    for (w, c) in phi.iter().zip(CORNERS) {
        out[0] += w * c[0];
        out[1] += w * c[1];
    }
    out
}

/// Component of `w` orthogonal to the all-ones vector.
pub fn project_direction(w: &[f64]) -> Vec<f64> {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|x| x - mean).collect()
}

/// Planar image of a direction. The embedding is a similarity on the
/// sum-zero plane, so the image points where `w^T phi` grows fastest.
pub fn embed_direction(w: &[f64]) -> Point {
    embed_point(&project_direction(w))
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn unit(a: Point) -> Point {
    let norm = a[0].hypot(a[1]);
    [a[0] / norm, a[1] / norm]
}

#[derive(Debug, Clone, Serialize)]
pub struct Facet {
    pub from: usize,
    pub to: usize,
    pub normal: Point,
}

/// Convex polygon of the planar state polytope, vertices counter-clockwise.
#[derive(Debug, Clone, Serialize)]
pub struct PlanarPolygon {
    /// Indices into `phi_vertices`, counter-clockwise.
    pub order: Vec<usize>,
    pub points: Vec<Point>,
    pub facets: Vec<Facet>,
}

impl PlanarPolygon {
    pub fn new(points: Vec<Point>) -> Self {
        let m = points.len();
        let cx = points.iter().map(|p| p[0]).sum::<f64>() / m as f64;
        let cy = points.iter().map(|p| p[1]).sum::<f64>() / m as f64;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| {
            let ai = (points[i][1] - cy).atan2(points[i][0] - cx);
            let aj = (points[j][1] - cy).atan2(points[j][0] - cx);
            ai.total_cmp(&aj)
        });
        let facets = match m {
            0 | 1 => Vec::new(),
            2 => {
                let d = unit(sub(points[1], points[0]));
                vec![
                    Facet { from: 0, to: 1, normal: [d[1], -d[0]] },
                    Facet { from: 1, to: 0, normal: [-d[1], d[0]] },
                ]
            }
            _ => (0..m)
                .map(|i| {
                    let (a, b) = (order[i], order[(i + 1) % m]);
                    let d = sub(points[b], points[a]);
                    Facet { from: a, to: b, normal: unit([d[1], -d[0]]) }
                })
                .collect(),
        };
        Self { order, points, facets }
    }

    /// Vertex whose normal cone contains `w`, decided from facet normals alone.
    pub fn normal_cone_vertex(&self, w: Point) -> usize {
        match self.points.len() {
            1 => 0,
            2 => {
                // cross(n, w) equals w . (p1 - p0) up to scale for n the clockwise normal.
                if cross(self.facets[0].normal, w) > 0.0 {
                    1
                } else {
                    0
                }
            }
            m => {
                for i in 0..m {
                    let incoming = &self.facets[(i + m - 1) % m];
                    let outgoing = &self.facets[i];
                    if cross(incoming.normal, w) >= 0.0 && cross(w, outgoing.normal) >= 0.0 {
                        return outgoing.from;
                    }
                }
                self.order[0]
            }
        }
    }

    pub fn area(&self) -> f64 {
        let m = self.order.len();
        if m < 3 {
            return 0.0;
        }
        0.5 * (0..m)
            .map(|i| cross(self.points[self.order[i]], self.points[self.order[(i + 1) % m]]))
            .sum::<f64>()
    }

    fn neighbours(&self, v: usize) -> Vec<usize> {
        self.facets
            .iter()
            .filter_map(|f| if f.from == v { Some(f.to) } else if f.to == v { Some(f.from) } else { None })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometryExport {
    pub schema_version: u32,
    pub state_labels: Vec<String>,
    pub simplex_vertices: Vec<Vec<f64>>,
    pub simplex_vertices_2d: Vec<Point>,
    pub phi_vertices: Vec<Vec<f64>>,
    pub phi_vertices_2d: Vec<Point>,
    pub phi_vertex_labels: Vec<String>,
    pub polygon: PlanarPolygon,
    pub reward_direction: Vec<f64>,
    pub reward_direction_2d: Point,
    pub value_direction: Vec<f64>,
    pub value_direction_2d: Point,
    pub proxy_direction: Option<Vec<f64>>,
    pub proxy_direction_2d: Option<Point>,
    /// Vertex selected by the true reward.
    pub aligned_vertex: usize,
    /// Facet from the aligned vertex to its neighbour with the larger value.
    pub highlighted_facet: (usize, usize),
    pub normal_direction: Point,
    pub reward_cone_vertex: usize,
    pub proxy_cone_vertex: Option<usize>,
    /// Proxy direction lies past the highlighted normal, toward the value-favoured neighbour.
    pub proxy_past_normal: Option<bool>,
    pub feasible_area: f64,
    pub reward_angle_from_vertical: f64,
}

fn state_label(s: usize) -> String {
    ["common", "instrumental", "terminal"][s].to_string()
}

/// Planar geometry for a three-state MDP.
pub fn export_geometry(mdp: &Mdp, r: &[f64], v: &[f64], r_hat: Option<&[f64]>) -> Result<GeometryExport> {
    if mdp.n_states() != 3 {
        return invalid(format!("planar export needs 3 states, MDP has {}", mdp.n_states()));
    }
    if r.len() != 3 || v.len() != 3 || r_hat.is_some_and(|p| p.len() != 3) {
        return invalid("reward, value and proxy must have 3 entries");
    }
    let polytope = compute_polytope(mdp)?;
    let points: Vec<Point> = polytope.phi_vertices.iter().map(|p| embed_point(p)).collect();
    let polygon = PlanarPolygon::new(points.clone());
    let reward_2d = embed_direction(r);
    let value_2d = embed_direction(v);
    let proxy_2d = r_hat.map(embed_direction);
    let aligned = polygon.normal_cone_vertex(reward_2d);
    let value_at = |i: usize| polytope.phi_vertices[i].iter().zip(v).map(|(p, x)| p * x).sum::<f64>();
    let partner = polygon
        .neighbours(aligned)
        .into_iter()
        .max_by(|&a, &b| value_at(a).total_cmp(&value_at(b)))
        .unwrap_or(aligned);
    let normal = polygon
        .facets
        .iter()
        .find(|f| (f.from, f.to) == (aligned, partner) || (f.from, f.to) == (partner, aligned))
        .map_or([0.0, 0.0], |f| f.normal);
    let toward_partner = sub(points[partner], points[aligned]);
    let proxy_past_normal = proxy_2d.map(|w| w[0] * toward_partner[0] + w[1] * toward_partner[1] > 0.0);

    let labels = polytope
        .phi_vertices
        .iter()
        .enumerate()
        .map(|(i, phi)| {
            if let Some(s) = (0..3).find(|&s| (phi[s] - 1.0).abs() <= DEDUP_TOL) {
                state_label(s)
            } else if i == aligned {
                "aligned".to_string()
            } else {
                format!("vertex {i}")
            }
        })
        .collect();
    Ok(GeometryExport {
        schema_version: GEOMETRY_SCHEMA_VERSION,
        state_labels: (0..3).map(state_label).collect(),
        simplex_vertices: (0..3).map(|s| (0..3).map(|t| f64::from(u8::from(s == t))).collect()).collect(),
        simplex_vertices_2d: CORNERS.to_vec(),
        phi_vertices_2d: points,
        phi_vertex_labels: labels,
        reward_direction: project_direction(r),
        reward_direction_2d: reward_2d,
        value_direction: project_direction(v),
        value_direction_2d: value_2d,
        proxy_direction: r_hat.map(project_direction),
        proxy_direction_2d: proxy_2d,
        aligned_vertex: aligned,
        highlighted_facet: (aligned, partner),
        normal_direction: normal,
        reward_cone_vertex: aligned,
        proxy_cone_vertex: proxy_2d.map(|w| polygon.normal_cone_vertex(w)),
        proxy_past_normal,
        feasible_area: polygon.area(),
        reward_angle_from_vertical: reward_2d[0].abs().atan2(reward_2d[1]),
        phi_vertices: polytope.phi_vertices,
        polygon,
    })
}

/// CSV of `(m, epsilon, vertex, label, phi_0, phi_1, phi_2, x, y)` rows.
pub fn sweep_csv(rows: &[(f64, f64, GeometryExport)]) -> String {
    let mut out = String::from("m,epsilon,vertex,label,phi_0,phi_1,phi_2,x,y\n");
    for (m, eps, geo) in rows {
        for (i, phi) in geo.phi_vertices.iter().enumerate() {
            let p = geo.phi_vertices_2d[i];
            let _ = writeln!(
                out,
                "{m},{eps},{i},{},{},{},{},{},{}",
                geo.phi_vertex_labels[i], phi[0], phi[1], phi[2], p[0], p[1]
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state_point_polytope() {
        let mdp = Mdp::new(vec![vec![vec![1.0]], vec![vec![1.0]]], 0).unwrap();
        let poly = compute_polytope(&mdp).unwrap();
        assert_eq!(poly.phi_vertices, vec![vec![1.0]]);
        assert_eq!(poly.psi_vertices.len(), 2);
    }

    #[test]
    fn period_two_swap() {
        let mdp = Mdp::new(vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]], 0).unwrap();
        let poly = compute_polytope(&mdp).unwrap();
        assert_eq!(poly.phi_vertices.len(), 1);
        assert!(close(&poly.phi_vertices[0], &[0.5, 0.5]));
        assert!(poly.flow_residual(&mdp) < 1e-12);
    }

    #[test]
    fn planar_export_needs_three_states() {
        let mdp = Mdp::new(vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]], 0).unwrap();
        assert!(export_geometry(&mdp, &[0.0, 1.0], &[0.0, 1.0], None).is_err());
    }

    #[test]
    fn embedding_is_a_similarity_on_the_plane() {
        let a = [0.3, -0.1, -0.2];
        let b = [-0.5, 0.25, 0.25];
        let (ea, eb) = (embed_direction(&a), embed_direction(&b));
        let dot3: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((ea[0] * eb[0] + ea[1] * eb[1] - 0.5 * dot3).abs() < 1e-15);
    }

    #[test]
    fn segment_cones() {
        let poly = PlanarPolygon::new(vec![[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(poly.normal_cone_vertex([1.0, 0.3]), 1);
        assert_eq!(poly.normal_cone_vertex([-1.0, 5.0]), 0);
    }
}
