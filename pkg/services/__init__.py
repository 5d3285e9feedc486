"""Services package"""
from services.storage_service import storage_service

__all__ = ['storage_service']
