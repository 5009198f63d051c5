#pragma once

#include "pmoe/algos/agent.hpp"
#include "pmoe/algos/config.hpp"
#include "pmoe/algos/evaluate.hpp"
#include "pmoe/algos/ppo.hpp"
#include "pmoe/algos/replay_buffer.hpp"
#include "pmoe/algos/sac.hpp"
#include "pmoe/core/error.hpp"
#include "pmoe/core/rng.hpp"
#include "pmoe/critic/critic.hpp"
#include "pmoe/critic/gae.hpp"
#include "pmoe/diff/adam.hpp"
#include "pmoe/diff/checkpoint.hpp"
#include "pmoe/diff/mlp.hpp"
#include "pmoe/diff/ops.hpp"
#include "pmoe/diff/tape.hpp"
#include "pmoe/diff/tensor.hpp"
#include "pmoe/envs/bandit.hpp"
#include "pmoe/envs/env.hpp"
#include "pmoe/envs/target_reaching.hpp"
#include "pmoe/policy/mixture_policy.hpp"
#include "pmoe/primitive_update/primitive_update.hpp"
#include "pmoe/routers/routers.hpp"
#include "pmoe/harness/cli.hpp"
#include "pmoe/harness/metric_log.hpp"
#include "pmoe/harness/metrics.hpp"
#include "pmoe/harness/run_config.hpp"
#include "pmoe/harness/runner.hpp"
#include "pmoe/harness/svg.hpp"
