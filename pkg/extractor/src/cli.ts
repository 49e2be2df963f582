#!/usr/bin/env node
/**
 * qodf-extract: feature export and verification.
 *
 *   extract --backbone wide-resnet-40-2 --dataset cifar10 --split test \
 *           --data-dir D --weights W --out f.qodf [--batch 256] [--no-labels]
 *   verify-features <file.qodf>
 *
 * Exit codes: 0 ok, 1 failure (message on stderr).
 */

import { extract, verifyFeatures } from './extract.js'
import { DatasetName } from './cifar.js'

function parseFlags(argv: string[]): Map<string, string | boolean> {
  const flags = new Map<string, string | boolean>()
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    if (!arg.startsWith('--')) continue
    const key = arg.slice(2)
    const next = argv[i + 1]
    if (next === undefined || next.startsWith('--')) {
      flags.set(key, true)
    } else {
      flags.set(key, next)
      i++
    }
  }
  return flags
}

function requireFlag(flags: Map<string, string | boolean>, name: string): string {
  const value = flags.get(name)
  if (typeof value !== 'string') {
    throw new Error(`missing required flag --${name}`)
  }
  return value
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2)
  if (command === 'extract') {
    const flags = parseFlags(rest)
    const result = await extract({
      backbone: requireFlag(flags, 'backbone'),
      dataset: requireFlag(flags, 'dataset') as DatasetName,
      split: requireFlag(flags, 'split') as 'train' | 'test',
      dataDir: requireFlag(flags, 'data-dir'),
      weightsDir: requireFlag(flags, 'weights'),
      outPath: requireFlag(flags, 'out'),
      batchSize: flags.has('batch') ? Number(flags.get('batch')) : undefined,
      includeLabels: !flags.has('no-labels'),
    })
    console.log(`wrote ${result.count} x ${result.dim} features -> ${result.outPath}`)
    return 0
  }
  if (command === 'verify-features') {
    const path = rest.find(a => !a.startsWith('--'))
    if (!path) throw new Error('usage: verify-features <file.qodf>')
    const summary = verifyFeatures(path)
    console.log(`count=${summary.count} dim=${summary.dim} labels=${summary.hasLabels}`)
    const show = Math.min(summary.dim, 8)
    for (let d = 0; d < show; d++) {
      console.log(
        `dim ${d}: mean=${summary.perDimMean[d].toFixed(6)} std=${summary.perDimStd[d].toFixed(6)}`,
      )
    }
    if (summary.dim > show) console.log(`... ${summary.dim - show} more dimensions`)
    return 0
  }
  console.error('usage: qodf-extract <extract|verify-features> [flags]')
  return 1
}

main()
  .then(code => process.exit(code))
  .catch(err => {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`)
    process.exit(1)
  })
