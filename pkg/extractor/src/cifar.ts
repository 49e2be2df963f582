/**
 * CIFAR-10 / CIFAR-100 binary batch readers.
 *
 * CIFAR-10 records are 1 label byte + 3072 pixel bytes (three 32x32 channel
 * planes, row-major); CIFAR-100 records carry a coarse and a fine label
 * byte. Pixels come back as float32 in [0, 1], CHW order.
 */

import { readFileSync } from 'fs'
import { join } from 'path'

export const IMAGE_EDGE = 32
export const IMAGE_CHANNELS = 3
export const IMAGE_PIXELS = IMAGE_EDGE * IMAGE_EDGE * IMAGE_CHANNELS

const CIFAR10_TRAIN_FILES = [
  'data_batch_1.bin',
  'data_batch_2.bin',
  'data_batch_3.bin',
  'data_batch_4.bin',
  'data_batch_5.bin',
]

export interface ImageDataset {
  count: number
  /** float32 in [0,1], CHW, length count*3072 */
  pixels: Float32Array
  labels: Uint32Array
}

function parseRecords(buffers: Buffer[], labelBytes: number, labelOffset: number): ImageDataset {
  const recordSize = labelBytes + IMAGE_PIXELS
  let count = 0
  for (const buf of buffers) {
    if (buf.length % recordSize !== 0) {
      throw new Error(`batch file length ${buf.length} is not a multiple of ${recordSize}`)
    }
    count += buf.length / recordSize
  }
  const pixels = new Float32Array(count * IMAGE_PIXELS)
  const labels = new Uint32Array(count)
  let rec = 0
  for (const buf of buffers) {
    const records = buf.length / recordSize
    for (let i = 0; i < records; i++) {
      const start = i * recordSize
      labels[rec] = buf[start + labelOffset]
      const base = rec * IMAGE_PIXELS
      for (let j = 0; j < IMAGE_PIXELS; j++) {
        pixels[base + j] = buf[start + labelBytes + j] / 255
      }
      rec++
    }
  }
  return { count, pixels, labels }
}

export function readCifar10(dir: string, split: 'train' | 'test'): ImageDataset {
  const base = join(dir, 'cifar-10-batches-bin')
  const files = split === 'train' ? CIFAR10_TRAIN_FILES : ['test_batch.bin']
  const buffers = files.map(f => readFileSync(join(base, f)))
  return parseRecords(buffers, 1, 0)
}

export function readCifar100(
  dir: string,
  split: 'train' | 'test',
  fineLabels = true,
): ImageDataset {
  const base = join(dir, 'cifar-100-binary')
  const buf = readFileSync(join(base, split === 'train' ? 'train.bin' : 'test.bin'))
  return parseRecords([buf], 2, fineLabels ? 1 : 0)
}

export type DatasetName = 'cifar10' | 'cifar100'

export function readDataset(name: DatasetName, dir: string, split: 'train' | 'test'): ImageDataset {
  if (name === 'cifar10') return readCifar10(dir, split)
  if (name === 'cifar100') return readCifar100(dir, split)
  throw new Error(`unknown dataset ${name}`)
}
