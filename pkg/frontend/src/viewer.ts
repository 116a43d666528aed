/**
 * Point-cloud viewer math: an orbiting pinhole camera projecting parsed
 * PCD points to canvas coordinates. Rendering itself is a straight
 * putImageData/fillRect pass in main.ts; everything geometric lives here
 * so it can be tested headlessly.
 */

import { PointCloud } from "./pcd.js";

export interface OrbitState {
  /** Radians around +Y; 0 looks down -Z like the capture camera. */
  azimuth: number;
  /** Radians above the horizon. */
  elevation: number;
  distance: number;
  target: [number, number, number];
}

export function defaultOrbit(): OrbitState {
  return { azimuth: 0, elevation: 0.3, distance: 4, target: [0, 0, -1.5] };
}

export function orbitEye(orbit: OrbitState): [number, number, number] {
  const ce = Math.cos(orbit.elevation);
  return [
    orbit.target[0] + orbit.distance * ce * Math.sin(orbit.azimuth),
    orbit.target[1] + orbit.distance * Math.sin(orbit.elevation),
    orbit.target[2] + orbit.distance * ce * Math.cos(orbit.azimuth),
  ];
}

function normalize(v: [number, number, number]): [number, number, number] {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross(a: [number, number, number], b: [number, number, number]): [number, number, number] {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

export interface ProjectedPoint {
  x: number;
  y: number;
  depth: number;
  colorIndex: number;
}

/**
 * Project cloud points through the orbit camera onto a width x height
 * canvas (y down). Points behind the camera are dropped; output is sorted
 * far-to-near so painters order draws correctly.
 */
export function projectCloud(
  cloud: PointCloud,
  orbit: OrbitState,
  width: number,
  height: number,
  focal = 0.8,
): ProjectedPoint[] {
  const eye = orbitEye(orbit);
  const zAxis = normalize([
    eye[0] - orbit.target[0],
    eye[1] - orbit.target[1],
    eye[2] - orbit.target[2],
  ]);
  const xAxis = normalize(cross([0, 1, 0], zAxis));
  const yAxis = cross(zAxis, xAxis);
  const fpx = focal * Math.min(width, height);

  const out: ProjectedPoint[] = [];
  for (let i = 0; i < cloud.count; i++) {
    const px = cloud.positions[3 * i] - eye[0];
    const py = cloud.positions[3 * i + 1] - eye[1];
    const pz = cloud.positions[3 * i + 2] - eye[2];
    const camX = px * xAxis[0] + py * xAxis[1] + pz * xAxis[2];
    const camY = px * yAxis[0] + py * yAxis[1] + pz * yAxis[2];
    const camZ = px * zAxis[0] + py * zAxis[1] + pz * zAxis[2];
    const depth = -camZ;
    if (depth <= 0) continue;
    out.push({
      x: width / 2 + (fpx * camX) / depth,
      y: height / 2 - (fpx * camY) / depth,
      depth,
      colorIndex: i,
    });
  }
  out.sort((a, b) => b.depth - a.depth);
  return out;
}

export function rotateOrbit(orbit: OrbitState, dAzimuth: number, dElevation: number): OrbitState {
  const limit = Math.PI / 2 - 0.01;
  return {
    ...orbit,
    azimuth: orbit.azimuth + dAzimuth,
    elevation: Math.max(-limit, Math.min(limit, orbit.elevation + dElevation)),
  };
}

export function zoomOrbit(orbit: OrbitState, factor: number): OrbitState {
  return { ...orbit, distance: Math.max(0.05, orbit.distance * factor) };
}
