// Binary wire protocol shared with the simulator: ORK1 magic, type byte,
// u32 LE payload length, payload, CRC32 of the payload. The gateway relays
// frames verbatim, so this file is the only protocol knowledge the console
// needs.

export const MAGIC = 0x314b524f; // "ORK1" little-endian
export const HEADER_SIZE = 9;
export const TRAILER_SIZE = 4;

export enum MsgType {
  State = 1,
  Frame = 2,
  Control = 3,
  Session = 4,
  Ack = 5,
  Error = 6,
  DiagMap = 64,
  DiagPose = 65,
  DiagPlan = 66,
  DiagObservation = 67,
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export interface WireMessage {
  type: number;
  payload: Uint8Array;
}

export function encodeMessage(type: number, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(HEADER_SIZE + payload.length + TRAILER_SIZE);
  const view = new DataView(out.buffer);
  view.setUint32(0, MAGIC, true);
  view.setUint8(4, type);
  view.setUint32(5, payload.length, true);
  out.set(payload, HEADER_SIZE);
  view.setUint32(HEADER_SIZE + payload.length, crc32(payload), true);
  return out;
}

export function decodeMessage(data: Uint8Array): WireMessage {
  if (data.length < HEADER_SIZE + TRAILER_SIZE) {
    throw new Error(`frame truncated: ${data.length} bytes`);
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  if (view.getUint32(0, true) !== MAGIC) {
    throw new Error("bad magic");
  }
  const type = view.getUint8(4);
  const length = view.getUint32(5, true);
  if (data.length < HEADER_SIZE + length + TRAILER_SIZE) {
    throw new Error("frame truncated");
  }
  const payload = data.slice(HEADER_SIZE, HEADER_SIZE + length);
  const crc = view.getUint32(HEADER_SIZE + length, true);
  if (crc !== crc32(payload)) {
    throw new Error("payload CRC mismatch");
  }
  return { type, payload };
}

export function encodeControl(throttle: number, brake: number, steering: number): Uint8Array {
  const payload = new Uint8Array(12);
  const view = new DataView(payload.buffer);
  view.setFloat32(0, throttle, true);
  view.setFloat32(4, brake, true);
  view.setFloat32(8, steering, true);
  return encodeMessage(MsgType.Control, payload);
}

export function encodeSession(obj: Record<string, unknown>): Uint8Array {
  return encodeMessage(MsgType.Session, new TextEncoder().encode(JSON.stringify(obj)));
}

export function decodeJson(payload: Uint8Array): Record<string, unknown> {
  return JSON.parse(new TextDecoder().decode(payload));
}

// STATE payload: flags byte; truth block = schema ver u8, tick u64, time f64,
// u16 channel count, f64 channels, u8 extras (len-prefixed name + f64);
// ins block = u64 pad, f64 speed, 17 f64 readings.
export const FLAG_TRUTH = 1;
export const FLAG_INS = 2;

export const CORE_CHANNELS = [
  "tick", "sim_time", "x", "y", "z", "heading", "roll", "pitch", "vx", "vy",
  "speed", "yaw_rate", "accel_long", "accel_lat", "wheel_angle_left",
  "wheel_angle_right", "throttle", "brake", "steering", "fuel_remaining",
  "lap_count", "lap_time_current", "last_lap_time", "lap_progress_s",
  "lateral_offset_d", "track_limit_margin", "crashed",
  ...["fl", "fr", "rl", "rr"].flatMap((w) =>
    ["temp", "wear", "slip_angle", "slip_ratio"].map((q) => `tyre_${w}_${q}`)
  ),
];

export interface StatePayload {
  tick: number;
  simTime: number;
  channels: Record<string, number> | null;
  speed: number | null;
  insTimestamp: number | null;
}

export function decodeStatePayload(payload: Uint8Array): StatePayload {
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  const flags = view.getUint8(0);
  let off = 1;
  let channels: Record<string, number> | null = null;
  let tick = 0;
  let simTime = 0;
  let speed: number | null = null;
  let insTimestamp: number | null = null;
  if (flags & FLAG_TRUTH) {
    off += 1; // schema version
    tick = Number(view.getBigUint64(off, true));
    off += 8;
    simTime = view.getFloat64(off, true);
    off += 8;
    const nCore = view.getUint16(off, true);
    off += 2;
    channels = {};
    for (let i = 0; i < nCore; i++) {
      channels[CORE_CHANNELS[i] ?? `ch${i}`] = view.getFloat64(off, true);
      off += 8;
    }
    const nExtra = view.getUint8(off);
    off += 1;
    for (let i = 0; i < nExtra; i++) {
      const len = view.getUint8(off);
      off += 1;
      const name = new TextDecoder().decode(payload.slice(off, off + len));
      off += len;
      channels[name] = view.getFloat64(off, true);
      off += 8;
    }
  }
  if (flags & FLAG_INS) {
    off += 8; // reserved
    speed = view.getFloat64(off, true);
    off += 8;
    // 17 readings; the last one is the timestamp
    insTimestamp = view.getFloat64(off + 16 * 8, true);
    off += 17 * 8;
  }
  return { tick, simTime, channels, speed, insTimestamp };
}

// Incremental splitter for streams that may concatenate frames.
export class MessageStream {
  private buffer = new Uint8Array(0);

  feed(data: Uint8Array): WireMessage[] {
    const merged = new Uint8Array(this.buffer.length + data.length);
    merged.set(this.buffer);
    merged.set(data, this.buffer.length);
    this.buffer = merged;
    const out: WireMessage[] = [];
    for (;;) {
      if (this.buffer.length < HEADER_SIZE) break;
      const view = new DataView(this.buffer.buffer, this.buffer.byteOffset);
      const length = view.getUint32(5, true);
      const total = HEADER_SIZE + length + TRAILER_SIZE;
      if (this.buffer.length < total) break;
      out.push(decodeMessage(this.buffer.slice(0, total)));
      this.buffer = this.buffer.slice(total);
    }
    return out;
  }
}
