import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

export interface WireVector {
  name: string;
  bytes_hex: string;
  msg_type: number;
  header: Record<string, unknown>;
  payloads_hex: string[];
}

export interface InvalidVector {
  name: string;
  bytes_hex: string;
  error: string;
}

export interface RampOracleCase {
  plane_depth_m: number;
  first_plane_row: number;
  plane_rows: boolean[];
  control_hex: string;
}

export interface RampOracle {
  session_id: string;
  width: number;
  height: number;
  row_depth_mm: number[];
  cases: RampOracleCase[];
}

function loadJson(relative: string) {
  const path = fileURLToPath(new URL(relative, import.meta.url));
  return JSON.parse(readFileSync(path, "utf-8"));
}

export function loadWireVectors(): { valid: WireVector[]; invalid: InvalidVector[] } {
  return loadJson("../../conformance/wire_vectors.json");
}

export function loadRampOracle(): RampOracle {
  return loadJson("../../conformance/ramp_oracle.json");
}
