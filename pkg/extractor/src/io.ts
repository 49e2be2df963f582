/**
 * Filesystem save/load for tfjs LayersModels (model.json + weights.bin).
 * The browser-oriented tfjs build ships no file:// handler, so this is the
 * minimal node implementation of the IOHandler protocol.
 */

import * as tf from '@tensorflow/tfjs'
import { mkdirSync, readFileSync, writeFileSync } from 'fs'
import { join } from 'path'

const MODEL_JSON = 'model.json'
const WEIGHTS_BIN = 'weights.bin'

export async function saveModelToDir(model: tf.LayersModel, dir: string): Promise<void> {
  mkdirSync(dir, { recursive: true })
  await model.save({
    save: async (artifacts: tf.io.ModelArtifacts) => {
      const weightData = artifacts.weightData as ArrayBuffer
      writeFileSync(join(dir, WEIGHTS_BIN), Buffer.from(weightData))
      const manifest = {
        modelTopology: artifacts.modelTopology,
        weightsManifest: [
          { paths: [WEIGHTS_BIN], weights: artifacts.weightSpecs },
        ],
      }
      writeFileSync(join(dir, MODEL_JSON), JSON.stringify(manifest))
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON' as const,
        },
      }
    },
  })
}

export async function loadModelFromDir(dir: string): Promise<tf.LayersModel> {
  const manifestPath = join(dir, MODEL_JSON)
  let manifest: any
  try {
    manifest = JSON.parse(readFileSync(manifestPath, 'utf-8'))
  } catch (err) {
    throw new Error(`cannot read model manifest at ${manifestPath}: ${String(err)}`)
  }
  const weightSpecs: tf.io.WeightsManifestEntry[] = []
  const buffers: Buffer[] = []
  for (const group of manifest.weightsManifest ?? []) {
    weightSpecs.push(...group.weights)
    for (const path of group.paths) {
      buffers.push(readFileSync(join(dir, path)))
    }
  }
  const weightData = Buffer.concat(buffers)
  return tf.loadLayersModel({
    load: async () => ({
      modelTopology: manifest.modelTopology,
      weightSpecs,
      weightData: weightData.buffer.slice(
        weightData.byteOffset,
        weightData.byteOffset + weightData.byteLength,
      ),
    }),
  })
}
