#pragma once

#include "contok/array.hpp"
#include "contok/autodiff.hpp"
#include "contok/binary_io.hpp"
#include "contok/config.hpp"
#include "contok/errors.hpp"
#include "contok/gradcheck.hpp"
#include "contok/gradcheck_suite.hpp"
#include "contok/inference.hpp"
#include "contok/model.hpp"
#include "contok/ot_flow.hpp"
#include "contok/parallel_seq.hpp"
#include "contok/rng.hpp"
#include "contok/synth_data.hpp"
#include "contok/toy_flow.hpp"
#include "contok/trainer.hpp"
