/**
 * Pretrained classifier backbones and penultimate-feature extraction.
 *
 * The feature head is the input of the model's last Dense layer (the
 * classification head); its width must match the declared backbone
 * dimension. Extraction always runs the network in evaluation mode, so no
 * dropout or batch statistics update and the output is deterministic.
 */

import * as tf from '@tensorflow/tfjs'
import { IMAGE_CHANNELS, IMAGE_EDGE, ImageDataset } from './cifar.js'
import { loadModelFromDir } from './io.js'

export const BACKBONES: Record<string, { featureDim: number }> = {
  'wide-resnet-40-2': { featureDim: 128 },
  'resnet-18': { featureDim: 512 },
}

/** Standard CIFAR evaluation normalization (per-channel mean/std). */
export const CIFAR_MEAN = [0.4914, 0.4822, 0.4465]
export const CIFAR_STD = [0.247, 0.2435, 0.2616]

export class Backbone {
  constructor(
    readonly name: string,
    readonly featureDim: number,
    private readonly featureModel: tf.LayersModel,
  ) {}

  /** Penultimate features for a CHW float batch, row-major per sample. */
  extract(pixels: Float32Array, count: number): Float32Array {
    const out = tf.tidy(() => {
      const chw = tf.tensor4d(pixels, [count, IMAGE_CHANNELS, IMAGE_EDGE, IMAGE_EDGE])
      const hwc = chw.transpose([0, 2, 3, 1])
      const normalized = hwc.sub(tf.tensor1d(CIFAR_MEAN)).div(tf.tensor1d(CIFAR_STD))
      return this.featureModel.predict(normalized) as tf.Tensor2D
    })
    const data = out.dataSync() as Float32Array
    out.dispose()
    return Float32Array.from(data)
  }
}

function lastDenseLayer(model: tf.LayersModel): tf.layers.Layer {
  for (let i = model.layers.length - 1; i >= 0; i--) {
    if (model.layers[i].getClassName() === 'Dense') {
      return model.layers[i]
    }
  }
  throw new Error('model has no Dense layer to treat as the classification head')
}

export async function loadBackbone(name: string, weightsDir: string): Promise<Backbone> {
  const spec = BACKBONES[name]
  if (!spec) {
    throw new Error(`unknown backbone ${name}; expected one of ${Object.keys(BACKBONES).join(', ')}`)
  }
  const model = await loadModelFromDir(weightsDir)
  const head = lastDenseLayer(model)
  const featureTensor = head.input as tf.SymbolicTensor
  const featureModel = tf.model({ inputs: model.inputs, outputs: featureTensor })
  const dims = featureTensor.shape
  const featureDim = dims[dims.length - 1]
  if (featureDim !== spec.featureDim) {
    throw new Error(
      `weights/architecture mismatch: ${name} must expose ${spec.featureDim}-d penultimate features, found ${featureDim}`,
    )
  }
  return new Backbone(name, spec.featureDim, featureModel)
}
