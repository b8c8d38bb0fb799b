#pragma once

// Everything in one include.

#include "zsa/backbones/backbone.hpp"
#include "zsa/backbones/config.hpp"
#include "zsa/backbones/convnets.hpp"
#include "zsa/backbones/pretrain.hpp"
#include "zsa/backbones/transformer.hpp"
#include "zsa/core/autograd.hpp"
#include "zsa/core/binary_io.hpp"
#include "zsa/core/checkpoint.hpp"
#include "zsa/core/error.hpp"
#include "zsa/core/parallel.hpp"
#include "zsa/core/params.hpp"
#include "zsa/core/rng.hpp"
#include "zsa/core/tensor.hpp"
#include "zsa/crossmodal/optim.hpp"
#include "zsa/crossmodal/projection.hpp"
#include "zsa/crossmodal/train.hpp"
#include "zsa/dsp/augment.hpp"
#include "zsa/dsp/features.hpp"
#include "zsa/dsp/mel.hpp"
#include "zsa/dsp/wav.hpp"
#include "zsa/eval/metrics.hpp"
#include "zsa/eval/report.hpp"
#include "zsa/eval/zeroshot.hpp"
#include "zsa/experiment/commands.hpp"
#include "zsa/experiment/config.hpp"
#include "zsa/protocol/classes.hpp"
#include "zsa/protocol/manifest.hpp"
#include "zsa/protocol/sampler.hpp"
#include "zsa/protocol/synth.hpp"
#include "zsa/semantics/vectors.hpp"
