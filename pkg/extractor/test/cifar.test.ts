import { mkdirSync, mkdtempSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { describe, expect, it } from 'vitest'

import { IMAGE_PIXELS, readCifar10, readCifar100 } from '../src/cifar.js'
import { writeCifar10Fixture } from './fixtures.js'

describe('cifar10 reader', () => {
  it('parses labels and pixel planes across batch files', () => {
    const root = mkdtempSync(join(tmpdir(), 'cifar-'))
    writeCifar10Fixture(root, [3, 2, 0, 0, 0, 4])
    const train = readCifar10(root, 'train')
    expect(train.count).toBe(5)
    expect(Array.from(train.labels)).toEqual([0, 1, 2, 3, 4])
    // first pixel of record 0 is byte 0 of the fixture pattern
    expect(train.pixels[0]).toBe(0)
    expect(train.pixels[1]).toBeCloseTo(1 / 255, 6)

    const test = readCifar10(root, 'test')
    expect(test.count).toBe(4)
    expect(Array.from(test.labels)).toEqual([5, 6, 7, 8])
  })

  it('rejects malformed batch sizes', () => {
    const root = mkdtempSync(join(tmpdir(), 'cifar-'))
    const dir = join(root, 'cifar-10-batches-bin')
    mkdirSync(dir, { recursive: true })
    for (const name of [
      'data_batch_1.bin',
      'data_batch_2.bin',
      'data_batch_3.bin',
      'data_batch_4.bin',
      'data_batch_5.bin',
    ]) {
      writeFileSync(join(dir, name), Buffer.alloc(100))
    }
    expect(() => readCifar10(root, 'train')).toThrow(/multiple/)
  })

  it('reads cifar100 fine and coarse labels', () => {
    const root = mkdtempSync(join(tmpdir(), 'cifar-'))
    const dir = join(root, 'cifar-100-binary')
    mkdirSync(dir, { recursive: true })
    const buf = Buffer.alloc(2 * (2 + IMAGE_PIXELS))
    buf[0] = 7 // coarse
    buf[1] = 42 // fine
    buf[2 + IMAGE_PIXELS] = 9
    buf[3 + IMAGE_PIXELS] = 77
    writeFileSync(join(dir, 'test.bin'), buf)
    const fine = readCifar100(root, 'test', true)
    expect(Array.from(fine.labels)).toEqual([42, 77])
    const coarse = readCifar100(root, 'test', false)
    expect(Array.from(coarse.labels)).toEqual([7, 9])
  })
})
