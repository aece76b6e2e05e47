"""
HTTP helpers for talking to remote retriever and policy services.

Both helpers return a structured result instead of raising, so callers can
decide whether a failure aborts the run or is recorded against a hop.
"""

import logging
from typing import Any, Dict, Optional

import httpx
import requests

from ..config import settings, auth_config

# Configure logger
logger = logging.getLogger(__name__)

_STATUS_DESCRIPTIONS = {
    401: ("Authentication required", "The request requires valid authentication credentials."),
    403: ("Access forbidden", "You do not have permission to access this resource."),
    404: ("Resource not found", "The requested endpoint could not be found on the server."),
}


def join_url(base_url: str, path: str) -> str:
    """Join a service base URL and an endpoint path with exactly one slash."""
    return f"{base_url.rstrip('/')}/{path.lstrip('/')}"


def _failure(error: str, status_code: int, description: str) -> Dict[str, Any]:
    return {
        "success": False,
        "data": None,
        "error": error,
        "status_code": status_code,
        "description": description,
    }


def _success(data: Any, status_code: int) -> Dict[str, Any]:
    return {
        "success": True,
        "data": data,
        "error": "",
        "status_code": status_code,
        "description": "Request completed",
    }


def _classify_status(url: str, status_code: int) -> Optional[Dict[str, Any]]:
    if status_code in _STATUS_DESCRIPTIONS:
        error, description = _STATUS_DESCRIPTIONS[status_code]
        logger.error(f"{error}: {url}")
        return _failure(error, status_code, description)
    if not 200 <= status_code < 300:
        logger.error(f"HTTP {status_code} from {url}")
        return _failure(f"HTTP {status_code}", status_code, f"The server at {url} answered with status {status_code}.")
    return None


def make_api_request(url: str, payload: Dict[str, Any], session: Optional[requests.Session] = None,
                     timeout: Optional[float] = None) -> Dict[str, Any]:
    """
    POST a JSON payload with requests and decode the JSON reply.

    Args:
        url: Full endpoint URL
        payload: JSON body
        session: Optional pooled session; a one-off request is made otherwise
        timeout: Request timeout in seconds (defaults to settings.request_timeout)

    Returns:
        Dict with "success", "data" (decoded JSON), "error", "status_code"
        and "description"
    """
    if timeout is None:
        timeout = settings.request_timeout
    poster = session.post if session is not None else requests.post

    try:
        response = poster(url, json=payload, headers=auth_config.get_headers(), timeout=timeout)
    except requests.exceptions.Timeout:
        logger.error(f"Request timeout for {url}")
        return _failure("Request timed out", 408, f"The request to {url} timed out after {timeout} seconds.")
    except requests.exceptions.ConnectionError:
        logger.error(f"Connection error for {url}")
        return _failure("Connection failed", 503, f"Could not connect to {url}. The server may be down or unreachable.")
    except requests.exceptions.RequestException as e:
        logger.error(f"Request error for {url}: {e}")
        return _failure(str(e), 500, f"Request failed: {e}")

    failure = _classify_status(url, response.status_code)
    if failure is not None:
        return failure
    try:
        return _success(response.json(), response.status_code)
    except ValueError:
        logger.error(f"Malformed JSON body from {url}")
        return _failure("Malformed response body", response.status_code, "Response is not JSON data")


def make_httpx_request(client: httpx.Client, url: str, payload: Dict[str, Any],
                       timeout: Optional[float] = None) -> Dict[str, Any]:
    """Same contract as make_api_request, over a shared httpx client."""
    if timeout is None:
        timeout = settings.request_timeout

    try:
        response = client.post(url, json=payload, headers=auth_config.get_headers(), timeout=timeout)
    except httpx.TimeoutException:
        logger.error(f"Request timeout for {url}")
        return _failure("Request timed out", 408, f"The request to {url} timed out after {timeout} seconds.")
    except httpx.ConnectError:
        logger.error(f"Connection error for {url}")
        return _failure("Connection failed", 503, f"Could not connect to {url}. The server may be down or unreachable.")
    except httpx.HTTPError as e:
        logger.error(f"HTTP error for {url}: {e}")
        return _failure(str(e), 500, f"Request failed: {e}")

    failure = _classify_status(url, response.status_code)
    if failure is not None:
        return failure
    try:
        return _success(response.json(), response.status_code)
    except ValueError:
        logger.error(f"Malformed JSON body from {url}")
        return _failure("Malformed response body", response.status_code, "Response is not JSON data")
