#pragma once

// Umbrella header for the titok library.

#include "titok/checkpoint.hpp"
#include "titok/config.hpp"
#include "titok/data.hpp"
#include "titok/error.hpp"
#include "titok/generator.hpp"
#include "titok/grad_check.hpp"
#include "titok/grad_suite.hpp"
#include "titok/image.hpp"
#include "titok/ops.hpp"
#include "titok/optim.hpp"
#include "titok/params.hpp"
#include "titok/probe.hpp"
#include "titok/quantizer.hpp"
#include "titok/random.hpp"
#include "titok/teacher.hpp"
#include "titok/tensor.hpp"
#include "titok/token_file.hpp"
#include "titok/tokenizer.hpp"
#include "titok/training.hpp"
#include "titok/transformer.hpp"
