#pragma once

#include "esir/rng.hpp"
#include "esir/csv.hpp"
#include "esir/schema.hpp"
#include "esir/numerics.hpp"
#include "esir/encoder.hpp"
#include "esir/gail.hpp"
#include "esir/scout.hpp"
#include "esir/eval.hpp"
#include "esir/study.hpp"
#include "esir/synth.hpp"
#include "esir/vlm.hpp"
#include "esir/service.hpp"
#include "esir/cli.hpp"
