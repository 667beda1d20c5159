#pragma once

#include "cotext/autodiff.hpp"
#include "cotext/cli.hpp"
#include "cotext/codec.hpp"
#include "cotext/config.hpp"
#include "cotext/corpus.hpp"
#include "cotext/denoise.hpp"
#include "cotext/error.hpp"
#include "cotext/infer.hpp"
#include "cotext/metrics.hpp"
#include "cotext/minilang.hpp"
#include "cotext/model.hpp"
#include "cotext/rng.hpp"
#include "cotext/tasks.hpp"
#include "cotext/tokenizer.hpp"
#include "cotext/trainer.hpp"
