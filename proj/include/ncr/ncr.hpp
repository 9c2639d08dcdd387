#pragma once

#include "ncr/baselines.hpp"
#include "ncr/data.hpp"
#include "ncr/eval.hpp"
#include "ncr/log.hpp"
#include "ncr/model_io.hpp"
#include "ncr/models.hpp"
#include "ncr/numerics.hpp"
#include "ncr/ranking.hpp"
#include "ncr/synthetic.hpp"
#include "ncr/trainer.hpp"
