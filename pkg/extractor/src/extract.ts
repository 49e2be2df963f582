/**
 * End-to-end export: dataset -> pretrained backbone -> QODF feature file.
 */

import { DatasetName, IMAGE_PIXELS, readDataset } from './cifar.js'
import { BACKBONES, loadBackbone } from './backbone.js'
import { FeatureSummary, summarizeQodf, writeQodf } from './qodf.js'

export interface ExtractJob {
  backbone: string
  dataset: DatasetName
  split: 'train' | 'test'
  dataDir: string
  weightsDir: string
  outPath: string
  batchSize?: number
  /** outlier exports omit class labels */
  includeLabels?: boolean
}

export interface ExtractResult {
  count: number
  dim: number
  outPath: string
}

export async function extract(job: ExtractJob): Promise<ExtractResult> {
  const spec = BACKBONES[job.backbone]
  if (!spec) {
    throw new Error(`unknown backbone ${job.backbone}`)
  }
  const batchSize = job.batchSize ?? 256
  if (batchSize < 1) {
    throw new Error(`batch size must be >= 1, got ${batchSize}`)
  }
  const dataset = readDataset(job.dataset, job.dataDir, job.split)
  const backbone = await loadBackbone(job.backbone, job.weightsDir)

  const features = new Float32Array(dataset.count * backbone.featureDim)
  for (let start = 0; start < dataset.count; start += batchSize) {
    const n = Math.min(batchSize, dataset.count - start)
    const slice = dataset.pixels.subarray(start * IMAGE_PIXELS, (start + n) * IMAGE_PIXELS)
    features.set(backbone.extract(slice, n), start * backbone.featureDim)
  }

  writeQodf(job.outPath, {
    count: dataset.count,
    dim: backbone.featureDim,
    data: features,
    labels: (job.includeLabels ?? true) ? dataset.labels : undefined,
  })
  return { count: dataset.count, dim: backbone.featureDim, outPath: job.outPath }
}

export function verifyFeatures(path: string): FeatureSummary {
  return summarizeQodf(path)
}
