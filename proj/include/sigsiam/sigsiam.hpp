#pragma once

#include "sigsiam/error.hpp"
#include "sigsiam/tensor.hpp"
#include "sigsiam/layers.hpp"
#include "sigsiam/params.hpp"
#include "sigsiam/siamese.hpp"
#include "sigsiam/optim.hpp"
#include "sigsiam/ingest.hpp"
#include "sigsiam/features.hpp"
#include "sigsiam/protocol.hpp"
#include "sigsiam/eval.hpp"
#include "sigsiam/config.hpp"
#include "sigsiam/checkpoint.hpp"
#include "sigsiam/commands.hpp"
