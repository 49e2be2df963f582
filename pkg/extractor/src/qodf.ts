/**
 * QODF v1 feature files (little-endian):
 *
 *   magic   4 bytes  "QODF"
 *   version u32      1
 *   count   u32      N
 *   dim     u32      m
 *   labels  u8       1 if a label block follows the data, else 0
 *   pad     3 bytes  zero
 *   data    N*m float32, row-major
 *   labels  N u32    (only when the flag is set)
 *
 * The dimension must be even and at least 2 (the density model splits each
 * vector in half), and every value must be finite.
 */

import { readFileSync, writeFileSync } from 'fs'

export const QODF_MAGIC = 'QODF'
export const QODF_VERSION = 1
export const HEADER_BYTES = 20

export class QodfFormatError extends Error {}

export interface FeaturePayload {
  count: number
  dim: number
  /** row-major, length count*dim */
  data: Float32Array
  labels?: Uint32Array
}

function checkPayload(payload: FeaturePayload): void {
  const { count, dim, data, labels } = payload
  if (dim < 2 || dim % 2 !== 0) {
    throw new QodfFormatError(`feature dimension must be even and >= 2, got ${dim}`)
  }
  if (data.length !== count * dim) {
    throw new QodfFormatError(`data length ${data.length} != count*dim ${count * dim}`)
  }
  if (labels && labels.length !== count) {
    throw new QodfFormatError(`labels length ${labels.length} != count ${count}`)
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new QodfFormatError(`non-finite value at flat index ${i}`)
    }
  }
}

export function encodeQodf(payload: FeaturePayload): Buffer {
  checkPayload(payload)
  const { count, dim, data, labels } = payload
  const size = HEADER_BYTES + count * dim * 4 + (labels ? count * 4 : 0)
  const buf = Buffer.alloc(size)
  buf.write(QODF_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(QODF_VERSION, 4)
  buf.writeUInt32LE(count, 8)
  buf.writeUInt32LE(dim, 12)
  buf.writeUInt8(labels ? 1 : 0, 16)
  // bytes 17..19 stay zero
  Buffer.from(data.buffer, data.byteOffset, data.byteLength).copy(buf, HEADER_BYTES)
  if (labels) {
    Buffer.from(labels.buffer, labels.byteOffset, labels.byteLength).copy(
      buf,
      HEADER_BYTES + count * dim * 4,
    )
  }
  return buf
}

export function writeQodf(path: string, payload: FeaturePayload): void {
  writeFileSync(path, encodeQodf(payload))
}

export function decodeQodf(buf: Buffer): FeaturePayload {
  if (buf.length < HEADER_BYTES) {
    throw new QodfFormatError(`file shorter than the ${HEADER_BYTES}-byte header`)
  }
  const magic = buf.toString('ascii', 0, 4)
  if (magic !== QODF_MAGIC) {
    throw new QodfFormatError(`bad magic ${JSON.stringify(magic)}, expected ${QODF_MAGIC}`)
  }
  const version = buf.readUInt32LE(4)
  if (version !== QODF_VERSION) {
    throw new QodfFormatError(`unsupported version ${version}`)
  }
  const count = buf.readUInt32LE(8)
  const dim = buf.readUInt32LE(12)
  const flag = buf.readUInt8(16)
  if (flag !== 0 && flag !== 1) {
    throw new QodfFormatError(`label flag must be 0 or 1, got ${flag}`)
  }
  if (dim < 2 || dim % 2 !== 0) {
    throw new QodfFormatError(`feature dimension must be even and >= 2, got ${dim}`)
  }
  const need = HEADER_BYTES + count * dim * 4 + (flag ? count * 4 : 0)
  if (buf.length < need) {
    throw new QodfFormatError(`payload has ${buf.length - HEADER_BYTES} bytes, header declares ${need - HEADER_BYTES}`)
  }
  if (buf.length > need) {
    throw new QodfFormatError(`${buf.length - need} trailing bytes after payload`)
  }
  const data = new Float32Array(count * dim)
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(HEADER_BYTES + i * 4)
    if (!Number.isFinite(data[i])) {
      throw new QodfFormatError(`non-finite value at flat index ${i}`)
    }
  }
  let labels: Uint32Array | undefined
  if (flag) {
    labels = new Uint32Array(count)
    const base = HEADER_BYTES + count * dim * 4
    for (let i = 0; i < count; i++) {
      labels[i] = buf.readUInt32LE(base + i * 4)
    }
  }
  return { count, dim, data, labels }
}

export function readQodf(path: string): FeaturePayload {
  return decodeQodf(readFileSync(path))
}

export interface FeatureSummary {
  count: number
  dim: number
  hasLabels: boolean
  perDimMean: number[]
  perDimStd: number[]
}

/** Validation summary used by the verify-features command. */
export function summarizeQodf(path: string): FeatureSummary {
  const { count, dim, data, labels } = readQodf(path)
  const mean = new Array<number>(dim).fill(0)
  const sq = new Array<number>(dim).fill(0)
  for (let i = 0; i < count; i++) {
    for (let d = 0; d < dim; d++) {
      const v = data[i * dim + d]
      mean[d] += v
      sq[d] += v * v
    }
  }
  const perDimMean = mean.map(s => (count > 0 ? s / count : 0))
  const perDimStd = sq.map((s, d) =>
    count > 0 ? Math.sqrt(Math.max(0, s / count - perDimMean[d] * perDimMean[d])) : 0,
  )
  return { count, dim, hasLabels: labels !== undefined, perDimMean, perDimStd }
}
