#pragma once

#include "nacap/tensor.hpp"
#include "nacap/autodiff.hpp"
#include "nacap/vocabulary.hpp"
#include "nacap/dataset.hpp"
#include "nacap/config.hpp"
#include "nacap/params.hpp"
#include "nacap/graph.hpp"
#include "nacap/encoder.hpp"
#include "nacap/aligner.hpp"
#include "nacap/decoder.hpp"
#include "nacap/inference.hpp"
#include "nacap/checkpoint.hpp"
#include "nacap/trainer.hpp"
#include "nacap/metrics.hpp"
