/**
 * Binary PCD v0.7 parser for the server's point-cloud payloads:
 * FIELDS x y z rgb, 16 bytes per point, rgb packed as a float32 whose bit
 * pattern is 0x00RRGGBB.
 */

export interface PointCloud {
  /** xyz triples, length 3n. */
  positions: Float32Array;
  /** rgb triples 0..255, length 3n. */
  colors: Uint8Array;
  count: number;
}

export class PcdParseError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PcdParseError";
  }
}

const MARKER = "DATA binary\n";

export function parsePcd(buf: ArrayBuffer | Uint8Array): PointCloud {
  const bytes = buf instanceof Uint8Array ? buf : new Uint8Array(buf);
  // The header is ASCII; search for the marker bytewise.
  const marker = new TextEncoder().encode(MARKER);
  let markerStart = -1;
  outer: for (let i = 0; i + marker.length <= bytes.length; i++) {
    for (let j = 0; j < marker.length; j++) {
      if (bytes[i + j] !== marker[j]) continue outer;
    }
    markerStart = i;
    break;
  }
  if (markerStart < 0) {
    throw new PcdParseError("missing 'DATA binary' header line");
  }
  const headerText = new TextDecoder().decode(bytes.subarray(0, markerStart));
  const header = new Map<string, string>();
  for (const line of headerText.split("\n")) {
    if (!line) continue;
    const space = line.indexOf(" ");
    header.set(line.slice(0, space), line.slice(space + 1));
  }
  if (header.get("VERSION") !== ".7") {
    throw new PcdParseError(`unsupported PCD version ${header.get("VERSION")}`);
  }
  if (header.get("FIELDS") !== "x y z rgb") {
    throw new PcdParseError(`unsupported fields ${header.get("FIELDS")}`);
  }
  const count = parseInt(header.get("POINTS") ?? "0", 10);
  const body = bytes.subarray(markerStart + marker.length);
  if (body.length !== count * 16) {
    throw new PcdParseError(`payload is ${body.length} bytes, expected ${count * 16}`);
  }

  const view = new DataView(body.buffer, body.byteOffset, body.byteLength);
  const positions = new Float32Array(count * 3);
  const colors = new Uint8Array(count * 3);
  for (let i = 0; i < count; i++) {
    positions[3 * i] = view.getFloat32(16 * i, true);
    positions[3 * i + 1] = view.getFloat32(16 * i + 4, true);
    positions[3 * i + 2] = view.getFloat32(16 * i + 8, true);
    const packed = view.getUint32(16 * i + 12, true);
    colors[3 * i] = (packed >> 16) & 0xff;
    colors[3 * i + 1] = (packed >> 8) & 0xff;
    colors[3 * i + 2] = packed & 0xff;
  }
  return { positions, colors, count };
}
