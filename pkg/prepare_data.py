#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Dataset preparation

    python prepare_data.py ingest --src MSTAR/TRAIN --out data/mstar
    python prepare_data.py synth --config configs/synth_small.yaml --out data/synth
    python prepare_data.py synth --out data/synth --images-per-class 200 --seed 0
    python prepare_data.py split --data data/mstar --seed 0 --out data/mstar/split.yaml
"""

import os
import sys
import logging
import argparse

from dotenv import load_dotenv
load_dotenv()

from sar_data.chips import load_dataset, save_dataset
from sar_data.episode_sampler import make_split, save_split_manifest
from sar_data.mstar_reader import ingest_directory
from sar_data.synthetic_sar import SynthConfig, generate_synthetic, load_synth_config
from utils.errors import FewSARError

logging.basicConfig(
    level=os.getenv('FEWSAR_LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def cmd_ingest(args) -> int:
    manifest = ingest_directory(args.src, args.out, show_progress=True)
    print(f"✅ Ingested {sum(manifest['counts'].values())} chips into {args.out}")
    for name, count in manifest['counts'].items():
        print(f"   📁 {name:<12}: {count}")
    return 0


def cmd_synth(args) -> int:
    overrides = {
        'n_classes': args.n_classes,
        'images_per_class': args.images_per_class,
        'speckle_looks': args.looks,
        'template_separation': args.separation,
        'rng_seed': args.seed,
    }
    if args.config:
        config = load_synth_config(args.config, overrides)
    else:
        config = SynthConfig(**{k: v for k, v in overrides.items() if v is not None})
    dataset = generate_synthetic(config)
    save_dataset(dataset, args.out, extra_manifest={'synthetic': config.to_dict()})
    print(f"✅ Wrote {config.n_classes} x {config.images_per_class} synthetic chips to {args.out}")
    return 0


def cmd_split(args) -> int:
    dataset = load_dataset(args.data)
    split = make_split(dataset.class_ids, seed=args.seed)
    out = args.out or os.path.join(args.data, 'split.yaml')
    save_split_manifest(split, dataset.class_names, out)
    print(f"✅ Split written to {out}")
    print(f"   🏋️ train: {[dataset.class_names[c] for c in sorted(split.train_classes)]}")
    print(f"   🧪 test:  {[dataset.class_names[c] for c in sorted(split.test_classes)]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='prepare_data', description="Build benchmark datasets and splits")
    sub = parser.add_subparsers(dest='command', required=True)

    ingest = sub.add_parser('ingest', help="Convert MSTAR class folders into the chip layout")
    ingest.add_argument('--src', required=True, help="One subdirectory per class of raw MSTAR files")
    ingest.add_argument('--out', required=True)
    ingest.set_defaults(func=cmd_ingest)

    synth = sub.add_parser('synth', help="Generate a synthetic SAR-like dataset")
    synth.add_argument('--config', default=None, help="YAML file of generator settings")
    synth.add_argument('--out', required=True)
    synth.add_argument('--n-classes', type=int, default=None, help="Overrides the config (default 10)")
    synth.add_argument('--images-per-class', type=int, default=None, help="Overrides the config (default 200)")
    synth.add_argument('--looks', type=float, default=None, help="Overrides the config (default 4)")
    synth.add_argument('--separation', type=float, default=None, help="Overrides the config (default 1)")
    synth.add_argument('--seed', type=int, default=None, help="Overrides the config (default 0)")
    synth.set_defaults(func=cmd_synth)

    split = sub.add_parser('split', help="Write a class-disjoint train/test split manifest")
    split.add_argument('--data', required=True)
    split.add_argument('--seed', type=int, default=0)
    split.add_argument('--out', default=None)
    split.set_defaults(func=cmd_split)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FewSARError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
