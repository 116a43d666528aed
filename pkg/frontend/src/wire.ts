/**
 * Binary envelope codec, the browser twin of the server's wire layer.
 *
 * Layout (little-endian): "ARCD" | version u8 | msg_type u8 |
 * header_len u32 | header JSON | payload_count u8 |
 * payload_count x (u32 length + bytes).
 *
 * Decode errors carry the same machine-readable codes as the server so
 * both sides can be checked against one set of conformance vectors.
 */

export const MAGIC = [0x41, 0x52, 0x43, 0x44]; // "ARCD"
export const VERSION = 1;

export enum MessageType {
  INIT = 0x01,
  FRAME = 0x02,
  ACK = 0x03,
  COMPOSITE = 0x04,
  CONTROL = 0x05,
  POINTCLOUD = 0x06,
  ERROR = 0x07,
  END = 0x08,
}

export type Header = Record<string, unknown>;

export interface Envelope {
  msgType: MessageType;
  header: Header;
  /** Exact header bytes as they appeared on the wire. */
  headerRaw: Uint8Array;
  payloads: Uint8Array[];
}

export class WireError extends Error {
  constructor(public code: string, message: string) {
    super(message);
    this.name = code;
  }
}

const utf8Decoder = new TextDecoder("utf-8", { fatal: true });
const utf8Encoder = new TextEncoder();

export function decode(buf: ArrayBuffer | Uint8Array): Envelope {
  const bytes = buf instanceof Uint8Array ? buf : new Uint8Array(buf);
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let offset = 0;

  const need = (n: number, what: string) => {
    if (offset + n > bytes.length) {
      throw new WireError("Truncated", `buffer ends inside ${what}`);
    }
  };

  need(4, "magic");
  for (let i = 0; i < 4; i++) {
    if (bytes[offset + i] !== MAGIC[i]) {
      throw new WireError("BadMagic", "expected 'ARCD' magic");
    }
  }
  offset += 4;

  need(2, "version/type");
  const version = bytes[offset];
  const rawType = bytes[offset + 1];
  offset += 2;
  if (version !== VERSION) {
    throw new WireError("UnsupportedVersion", `version ${version}`);
  }
  if (!(rawType in MessageType)) {
    throw new WireError("UnknownMessageType", `msg_type 0x${rawType.toString(16)}`);
  }

  need(4, "header length");
  const headerLen = view.getUint32(offset, true);
  offset += 4;
  need(headerLen, "header");
  const headerRaw = bytes.slice(offset, offset + headerLen);
  offset += headerLen;
  let header: unknown;
  try {
    header = JSON.parse(utf8Decoder.decode(headerRaw));
  } catch (err) {
    throw new WireError("MalformedHeader", String(err));
  }
  if (typeof header !== "object" || header === null || Array.isArray(header)) {
    throw new WireError("MalformedHeader", "header must be a JSON object");
  }

  need(1, "payload count");
  const payloadCount = bytes[offset];
  offset += 1;
  const payloads: Uint8Array[] = [];
  for (let i = 0; i < payloadCount; i++) {
    need(4, `payload ${i} length`);
    const length = view.getUint32(offset, true);
    offset += 4;
    need(length, `payload ${i}`);
    payloads.push(bytes.slice(offset, offset + length));
    offset += length;
  }
  if (offset !== bytes.length) {
    throw new WireError("TrailingBytes", `${bytes.length - offset} bytes after envelope end`);
  }
  return { msgType: rawType as MessageType, header: header as Header, headerRaw, payloads };
}

function encodeRaw(msgType: MessageType, headerRaw: Uint8Array, payloads: Uint8Array[]): Uint8Array {
  if (payloads.length > 255) {
    throw new WireError("TooManyPayloads", `${payloads.length} payloads exceed the u8 count`);
  }
  let total = 4 + 2 + 4 + headerRaw.length + 1;
  for (const p of payloads) total += 4 + p.length;
  const out = new Uint8Array(total);
  const view = new DataView(out.buffer);
  out.set(MAGIC, 0);
  out[4] = VERSION;
  out[5] = msgType;
  view.setUint32(6, headerRaw.length, true);
  out.set(headerRaw, 10);
  let offset = 10 + headerRaw.length;
  out[offset++] = payloads.length;
  for (const p of payloads) {
    view.setUint32(offset, p.length, true);
    offset += 4;
    out.set(p, offset);
    offset += p.length;
  }
  return out;
}

/** Encode with a JSON header; key order follows object insertion order. */
export function encode(msgType: MessageType, header: Header, payloads: Uint8Array[] = []): Uint8Array {
  return encodeRaw(msgType, utf8Encoder.encode(JSON.stringify(header)), payloads);
}

/** Re-frame a decoded envelope using its original header bytes. */
export function reencode(envelope: Envelope): Uint8Array {
  return encodeRaw(envelope.msgType, envelope.headerRaw, envelope.payloads);
}

// -- control commands ------------------------------------------------------

export function setPlaneDepth(sessionId: string, depthM: number): Header {
  return { kind: "set_plane_depth", session_id: sessionId, depth_m: depthM };
}

export function setObjectPose(
  sessionId: string,
  objectId: string,
  pose: number[],
  scale: number,
): Header {
  return { kind: "set_object_pose", session_id: sessionId, object_id: objectId, pose, scale };
}

export function selectModels(sessionId: string, modelIds: string[]): Header {
  return { kind: "select_models", session_id: sessionId, model_ids: modelIds };
}

export function replaySeek(sessionId: string, frameIndex: number): Header {
  return { kind: "replay_seek", session_id: sessionId, frame_index: frameIndex };
}

export function replayMode(sessionId: string, mode: "video" | "frame_by_frame", fps: number): Header {
  return { kind: "replay_mode", session_id: sessionId, mode, fps };
}

export function hexToBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}
