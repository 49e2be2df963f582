import { mkdirSync, writeFileSync } from 'fs'
import { join } from 'path'

import { IMAGE_PIXELS } from '../src/cifar.js'

/** Small CIFAR-10-format directory; counts index the 5 train files + test. */
export function writeCifar10Fixture(root: string, counts: number[]): void {
  const dir = join(root, 'cifar-10-batches-bin')
  mkdirSync(dir, { recursive: true })
  const names = [
    'data_batch_1.bin',
    'data_batch_2.bin',
    'data_batch_3.bin',
    'data_batch_4.bin',
    'data_batch_5.bin',
    'test_batch.bin',
  ]
  let serial = 0
  names.forEach((name, fileIdx) => {
    const n = counts[fileIdx] ?? 0
    const buf = Buffer.alloc(n * (1 + IMAGE_PIXELS))
    for (let i = 0; i < n; i++) {
      const start = i * (1 + IMAGE_PIXELS)
      buf[start] = serial % 10
      for (let j = 0; j < IMAGE_PIXELS; j++) {
        buf[start + 1 + j] = (serial * 7 + j) % 256
      }
      serial++
    }
    writeFileSync(join(dir, name), buf)
  })
}
