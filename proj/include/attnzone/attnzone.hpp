#pragma once

#include "attnzone/artifact.hpp"
#include "attnzone/attention_env.hpp"
#include "attnzone/config.hpp"
#include "attnzone/data.hpp"
#include "attnzone/dqn.hpp"
#include "attnzone/mapper.hpp"
#include "attnzone/metrics.hpp"
#include "attnzone/numerics.hpp"
#include "attnzone/pipeline.hpp"
#include "attnzone/rng.hpp"
#include "attnzone/signal_stats.hpp"
