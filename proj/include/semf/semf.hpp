#pragma once

#include "semf/ablate.hpp"
#include "semf/data.hpp"
#include "semf/encoders.hpp"
#include "semf/error.hpp"
#include "semf/fusion.hpp"
#include "semf/metrics.hpp"
#include "semf/model.hpp"
#include "semf/nn.hpp"
#include "semf/rng.hpp"
#include "semf/tensor.hpp"
#include "semf/timefreq.hpp"
#include "semf/training.hpp"
