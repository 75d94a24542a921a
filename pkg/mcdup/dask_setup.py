"""Dask client for multi-seed sweeps."""

import logging

import dask
from dask.distributed import Client, LocalCluster

from . import fileio


VALID_KEYS = ["LocalCluster", "temporary_directory"]


def cluster_kwargs(config):
    """LocalCluster keyword arguments from a sweep cluster config.

    Parameters
    ----------
    config : str or dict
        YAML file path, or the mapping it holds

    Returns
    -------
    kwargs : dict

    Raises
    ------
    KeyError
        For a key other than LocalCluster or temporary_directory
    ValueError
        If the config has no LocalCluster mapping
    """

    config_dict = fileio.read_config(config) if isinstance(config, str) else dict(config)
    for key in config_dict:
        if key not in VALID_KEYS:
            raise KeyError(f"Invalid dask config key: {key}")
    if "LocalCluster" not in config_dict:
        raise ValueError("No recognised clusters in dask config file")
    if "temporary_directory" in config_dict:
        dask.config.set(temporary_directory=config_dict["temporary_directory"])

    return dict(config_dict["LocalCluster"] or {})


def launch_client(config):
    """Launch a dask client for seed sweeps.

    Parameters
    ----------
    config : str or dict
        YAML file path (or mapping) with a LocalCluster entry

    Returns
    -------
    client : Dask client
    """

    cluster = LocalCluster(**cluster_kwargs(config))
    client = Client(cluster)
    logging.info(f"Sweep cluster with {len(cluster.workers)} workers")
    print(f"Watch progress at {client.dashboard_link}")

    return client
